// Unified-diff rendering: parse hunk text into numbered rows and render
// either a unified list or an aligned side-by-side table. Rendering is
// string-in string-out so it can be tested without a browser.

export type RowKind = "header" | "hunk" | "context" | "added" | "removed";

export interface DiffRow {
  kind: RowKind;
  oldNo: number | null;
  newNo: number | null;
  text: string;
}

const HUNK_RE = /^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@/;

export function parseUnifiedDiff(text: string): DiffRow[] {
  const rows: DiffRow[] = [];
  let oldNo = 0;
  let newNo = 0;
  for (const line of text.split("\n")) {
    if (line === "" || line.startsWith("\\")) continue;
    const hunk = HUNK_RE.exec(line);
    if (hunk) {
      oldNo = parseInt(hunk[1], 10);
      newNo = parseInt(hunk[3], 10);
      rows.push({ kind: "hunk", oldNo: null, newNo: null, text: line });
      continue;
    }
    if (line.startsWith("---") || line.startsWith("+++") || line.startsWith("diff ")) {
      rows.push({ kind: "header", oldNo: null, newNo: null, text: line });
      continue;
    }
    const marker = line[0];
    const body = line.slice(1);
    if (marker === "+") {
      rows.push({ kind: "added", oldNo: null, newNo: newNo++, text: body });
    } else if (marker === "-") {
      rows.push({ kind: "removed", oldNo: oldNo++, newNo: null, text: body });
    } else {
      rows.push({ kind: "context", oldNo: oldNo++, newNo: newNo++, text: body });
    }
  }
  return rows;
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function cell(no: number | null): string {
  return no == null ? "" : String(no);
}

export function renderUnified(rows: DiffRow[]): string {
  const lines = rows.map((row) => {
    const marker = row.kind === "added" ? "+" : row.kind === "removed" ? "-" : " ";
    return (
      `<tr class="diff-${row.kind}">` +
      `<td class="num">${cell(row.oldNo)}</td>` +
      `<td class="num">${cell(row.newNo)}</td>` +
      `<td class="code">${escapeHtml(marker + row.text)}</td></tr>`
    );
  });
  return `<table class="diff diff-unified">${lines.join("")}</table>`;
}

interface SidePair {
  left: DiffRow | null;
  right: DiffRow | null;
}

// Pair removed rows against the added rows of the same hunk block so
// replacements sit next to each other.
export function pairRows(rows: DiffRow[]): SidePair[] {
  const pairs: SidePair[] = [];
  let removed: DiffRow[] = [];
  let added: DiffRow[] = [];

  const flush = () => {
    const n = Math.max(removed.length, added.length);
    for (let i = 0; i < n; i++) {
      pairs.push({ left: removed[i] ?? null, right: added[i] ?? null });
    }
    removed = [];
    added = [];
  };

  for (const row of rows) {
    if (row.kind === "removed") {
      removed.push(row);
    } else if (row.kind === "added") {
      added.push(row);
    } else {
      flush();
      if (row.kind === "context") {
        pairs.push({ left: row, right: row });
      } else {
        pairs.push({ left: row, right: null });
      }
    }
  }
  flush();
  return pairs;
}

export function renderSideBySide(rows: DiffRow[]): string {
  const html = pairRows(rows).map(({ left, right }) => {
    const sideCell = (row: DiffRow | null, side: "old" | "new") => {
      if (row == null) return `<td class="num"></td><td class="code empty"></td>`;
      if (row.kind === "header" || row.kind === "hunk") {
        return `<td class="num"></td><td class="code diff-${row.kind}">${escapeHtml(row.text)}</td>`;
      }
      const no = side === "old" ? row.oldNo : row.newNo;
      return (
        `<td class="num">${cell(no)}</td>` +
        `<td class="code diff-${row.kind}">${escapeHtml(row.text)}</td>`
      );
    };
    return `<tr>${sideCell(left, "old")}${sideCell(right, "new")}</tr>`;
  });
  return `<table class="diff diff-split">${html.join("")}</table>`;
}
