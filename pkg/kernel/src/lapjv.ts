/**
 * Jonker-Volgenant solver for the dense linear assignment problem:
 * exact minimum-cost perfect matching on an n x n cost matrix.
 *
 * R. Jonker and A. Volgenant, "A Shortest Augmenting Path Algorithm for
 * Dense and Sparse Linear Assignment Problems," Computing 38, 1987.
 */

export function lapjv(n: number, cost: (i: number, j: number) => number): Int32Array {
  const rowsol = new Int32Array(n).fill(-1); // rowsol[i] = column assigned to row i
  const colsol = new Int32Array(n).fill(-1);
  const u = new Float64Array(n);
  const v = new Float64Array(n);
  const free = new Int32Array(n);
  const collist = new Int32Array(n);
  const matches = new Int32Array(n);
  const d = new Float64Array(n);
  const pred = new Int32Array(n);
  let numfree = 0;

  // column reduction
  for (let j = n - 1; j >= 0; j--) {
    let min = cost(0, j);
    let imin = 0;
    for (let i = 1; i < n; i++) {
      const c = cost(i, j);
      if (c < min) {
        min = c;
        imin = i;
      }
    }
    v[j] = min;
    if (++matches[imin] === 1) {
      rowsol[imin] = j;
      colsol[j] = imin;
    } else {
      colsol[j] = -1;
    }
  }

  // reduction transfer
  for (let i = 0; i < n; i++) {
    if (matches[i] === 0) {
      free[numfree++] = i;
    } else if (matches[i] === 1) {
      const j1 = rowsol[i];
      let min = Infinity;
      for (let j = 0; j < n; j++) {
        if (j !== j1) {
          const slack = cost(i, j) - v[j];
          if (slack < min) min = slack;
        }
      }
      v[j1] = v[j1] - min;
    }
  }

  // augmenting row reduction (two passes)
  for (let loop = 0; loop < 2; loop++) {
    let k = 0;
    const prvnumfree = numfree;
    numfree = 0;
    while (k < prvnumfree) {
      const i = free[k++];
      let umin = cost(i, 0) - v[0];
      let j1 = 0;
      let usubmin = Infinity;
      let j2 = -1;
      for (let j = 1; j < n; j++) {
        const h = cost(i, j) - v[j];
        if (h < usubmin) {
          if (h >= umin) {
            usubmin = h;
            j2 = j;
          } else {
            usubmin = umin;
            umin = h;
            j2 = j1;
            j1 = j;
          }
        }
      }
      let i0 = colsol[j1];
      if (umin < usubmin) {
        v[j1] = v[j1] - (usubmin - umin);
      } else if (i0 >= 0) {
        j1 = j2;
        i0 = colsol[j2];
      }
      rowsol[i] = j1;
      colsol[j1] = i;
      if (i0 >= 0) {
        if (umin < usubmin) {
          free[--k] = i0;
        } else {
          free[numfree++] = i0;
        }
      }
    }
  }

  // augmentation via shortest paths
  for (let f = 0; f < numfree; f++) {
    const freerow = free[f];
    for (let j = 0; j < n; j++) {
      d[j] = cost(freerow, j) - v[j];
      pred[j] = freerow;
      collist[j] = j;
    }
    let low = 0;
    let up = 0;
    let last = 0;
    let endofpath = -1;
    let min = 0;
    let unassignedfound = false;
    while (!unassignedfound) {
      if (up === low) {
        last = low - 1;
        min = d[collist[up++]];
        for (let k = up; k < n; k++) {
          const j = collist[k];
          const h = d[j];
          if (h <= min) {
            if (h < min) {
              up = low;
              min = h;
            }
            collist[k] = collist[up];
            collist[up++] = j;
          }
        }
        for (let k = low; k < up; k++) {
          if (colsol[collist[k]] < 0) {
            endofpath = collist[k];
            unassignedfound = true;
            break;
          }
        }
      }
      if (!unassignedfound) {
        const j1 = collist[low++];
        const i = colsol[j1];
        const h = cost(i, j1) - v[j1] - min;
        for (let k = up; k < n; k++) {
          const j = collist[k];
          const vv = cost(i, j) - v[j] - h;
          if (vv < d[j]) {
            pred[j] = i;
            if (vv === min) {
              if (colsol[j] < 0) {
                endofpath = j;
                unassignedfound = true;
                break;
              }
              collist[k] = collist[up];
              collist[up++] = j;
            }
            d[j] = vv;
          }
        }
      }
    }
    for (let k = low; k <= last; k++) {
      const j1 = collist[k];
      v[j1] = v[j1] + d[j1] - min;
    }
    let i: number;
    let j = endofpath;
    do {
      i = pred[j];
      colsol[j] = i;
      const k = j;
      j = rowsol[i];
      rowsol[i] = k;
    } while (i !== freerow);
  }

  return rowsol;
}
