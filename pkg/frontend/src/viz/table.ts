/** Small CSV reader for result tables.
 *
 * Result CSVs are machine-written (comma-separated, first row header, no
 * embedded commas except inside double quotes), so a compact parser covers
 * them without pulling in a full dialect library.
 */

export function parseCsv(text: string): Map<string, string[]> {
  const rows: string[][] = [];
  for (const line of text.split(/\r?\n/)) {
    if (line.length === 0) continue;
    rows.push(splitLine(line));
  }
  const columns = new Map<string, string[]>();
  const header = rows.shift();
  if (!header) return columns;
  header.forEach((name, i) => {
    columns.set(name, rows.map((row) => row[i] ?? ""));
  });
  return columns;
}

function splitLine(line: string): string[] {
  const cells: string[] = [];
  let cell = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i]!;
    if (quoted) {
      if (ch === '"') {
        if (line[i + 1] === '"') {
          cell += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        cell += ch;
      }
    } else if (ch === '"') {
      quoted = true;
    } else if (ch === ",") {
      cells.push(cell);
      cell = "";
    } else {
      cell += ch;
    }
  }
  cells.push(cell);
  return cells;
}

/** Paired numeric values of two columns, rows with gaps dropped. */
export function numericPairs(
  columns: Map<string, string[]>,
  a: string,
  b: string,
): [number, number][] {
  const xs = columns.get(a) ?? [];
  const ys = columns.get(b) ?? [];
  const pairs: [number, number][] = [];
  const n = Math.min(xs.length, ys.length);
  for (let i = 0; i < n; i++) {
    const x = Number.parseFloat(xs[i]!);
    const y = Number.parseFloat(ys[i]!);
    if (Number.isFinite(x) && Number.isFinite(y)) pairs.push([x, y]);
  }
  return pairs;
}

/** Frequency of each level in a column, insertion-ordered. */
export function levelCounts(
  columns: Map<string, string[]>,
  name: string,
): [string, number][] {
  const counts = new Map<string, number>();
  for (const value of columns.get(name) ?? []) {
    if (value === "") continue;
    counts.set(value, (counts.get(value) ?? 0) + 1);
  }
  return [...counts.entries()];
}
