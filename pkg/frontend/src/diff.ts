/** Word-level diff used to highlight how the ASR output deviates from the
 * script text. Classic LCS backtrack; sentences are short so O(n*m) is fine. */

export type DiffKind = "same" | "removed" | "added";

export interface DiffOp {
  kind: DiffKind;
  text: string;
}

export function diffWords(a: string, b: string): DiffOp[] {
  const left = a.split(/\s+/).filter(Boolean);
  const right = b.split(/\s+/).filter(Boolean);
  const n = left.length;
  const m = right.length;
  const lcs: number[][] = Array.from({ length: n + 1 }, () => new Array(m + 1).fill(0));
  for (let i = n - 1; i >= 0; i--) {
    for (let j = m - 1; j >= 0; j--) {
      lcs[i][j] =
        left[i] === right[j]
          ? lcs[i + 1][j + 1] + 1
          : Math.max(lcs[i + 1][j], lcs[i][j + 1]);
    }
  }
  const ops: DiffOp[] = [];
  let i = 0;
  let j = 0;
  while (i < n && j < m) {
    if (left[i] === right[j]) {
      ops.push({ kind: "same", text: left[i] });
      i++;
      j++;
    } else if (lcs[i + 1][j] >= lcs[i][j + 1]) {
      ops.push({ kind: "removed", text: left[i] });
      i++;
    } else {
      ops.push({ kind: "added", text: right[j] });
      j++;
    }
  }
  while (i < n) {
    ops.push({ kind: "removed", text: left[i++] });
  }
  while (j < m) {
    ops.push({ kind: "added", text: right[j++] });
  }
  return ops;
}
