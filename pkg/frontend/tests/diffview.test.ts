import { describe, expect, it } from "vitest";

import {
  escapeHtml,
  pairRows,
  parseUnifiedDiff,
  renderSideBySide,
  renderUnified,
} from "../src/diffview.js";

const DIFF = [
  "--- a/src/x.c",
  "+++ b/src/x.c",
  "@@ -1,5 +1,5 @@",
  " a",
  " b",
  "-c",
  "+C",
  " d",
  " e",
].join("\n");

describe("parseUnifiedDiff", () => {
  it("numbers context, removed, and added lines", () => {
    const rows = parseUnifiedDiff(DIFF);
    const kinds = rows.map((r) => r.kind);
    expect(kinds).toEqual([
      "header", "header", "hunk", "context", "context", "removed", "added",
      "context", "context",
    ]);
    const removed = rows.find((r) => r.kind === "removed")!;
    expect(removed.oldNo).toBe(3);
    expect(removed.newNo).toBeNull();
    const added = rows.find((r) => r.kind === "added")!;
    expect(added.newNo).toBe(3);
    const lastContext = rows[rows.length - 1];
    expect(lastContext.oldNo).toBe(5);
    expect(lastContext.newNo).toBe(5);
  });

  it("tracks numbering across several hunks", () => {
    const multi = [
      "@@ -1,2 +1,2 @@", " a", "-b", "+B",
      "@@ -10,2 +10,3 @@", " x", "+y", " z",
    ].join("\n");
    const rows = parseUnifiedDiff(multi);
    const second = rows.filter((r) => r.oldNo != null && r.oldNo >= 10);
    expect(second[0].oldNo).toBe(10);
    expect(second[1].oldNo).toBe(11);
  });
});

describe("renderUnified", () => {
  it("escapes html in code", () => {
    const rows = parseUnifiedDiff('@@ -1,1 +1,1 @@\n-<script>alert("x")</script>\n+safe');
    const html = renderUnified(rows);
    expect(html).not.toContain("<script>alert");
    expect(html).toContain("&lt;script&gt;");
    expect(html).toContain("diff-removed");
    expect(html).toContain("diff-added");
  });
});

describe("pairRows / renderSideBySide", () => {
  it("aligns replacements on one row", () => {
    const rows = parseUnifiedDiff(DIFF);
    const pairs = pairRows(rows);
    const replaced = pairs.find((p) => p.left?.kind === "removed");
    expect(replaced).toBeDefined();
    expect(replaced!.right?.kind).toBe("added");
    expect(replaced!.left?.text).toBe("c");
    expect(replaced!.right?.text).toBe("C");
  });

  it("pads unbalanced blocks with empty cells", () => {
    const rows = parseUnifiedDiff("@@ -1,1 +1,2 @@\n-a\n+x\n+y");
    const pairs = pairRows(rows).filter((p) => p.left?.kind !== "hunk");
    expect(pairs).toHaveLength(2);
    expect(pairs[1].left).toBeNull();
    expect(pairs[1].right?.text).toBe("y");
    const html = renderSideBySide(rows);
    expect(html).toContain("diff-split");
  });
});

describe("escapeHtml", () => {
  it("covers the usual suspects", () => {
    expect(escapeHtml('<a href="x">&</a>')).toBe(
      "&lt;a href=&quot;x&quot;&gt;&amp;&lt;/a&gt;",
    );
  });
});
