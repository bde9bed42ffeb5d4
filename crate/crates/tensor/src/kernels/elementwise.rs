//! Broadcasting index plans for binary elementwise ops.

/// Index plan for a binary op whose operand dims are equal or 1 on every
/// axis after left-padding with ones.
#[derive(Debug, Clone)]
pub(crate) struct Broadcast {
    pub out_dims: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
    same: bool,
}

fn padded(dims: &[usize], rank: usize) -> Vec<usize> {
    let mut p = vec![1; rank - dims.len()];
    p.extend_from_slice(dims);
    p
}

fn strides(dims: &[usize], out: &[usize]) -> Vec<usize> {
    let mut s = vec![0; dims.len()];
    let mut acc = 1;
    for i in (0..dims.len()).rev() {
        s[i] = if dims[i] == 1 && out[i] != 1 { 0 } else { acc };
        acc *= dims[i];
    }
    s
}

impl Broadcast {
    pub fn new(a: &[usize], b: &[usize]) -> Option<Self> {
        if a == b {
            return Some(Self {
                out_dims: a.to_vec(),
                a_strides: vec![],
                b_strides: vec![],
                same: true,
            });
        }
        let rank = a.len().max(b.len());
        let (pa, pb) = (padded(a, rank), padded(b, rank));
        let mut out = Vec::with_capacity(rank);
        for (&x, &y) in pa.iter().zip(&pb) {
            match (x, y) {
                _ if x == y => out.push(x),
                (1, _) => out.push(y),
                (_, 1) => out.push(x),
                _ => return None,
            }
        }
        let a_strides = strides(&pa, &out);
        let b_strides = strides(&pb, &out);
        Some(Self { out_dims: out, a_strides, b_strides, same: false })
    }

    pub fn numel(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Calls `f(out_index, a_index, b_index)` in output order.
    pub fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let n = self.numel();
        if self.same {
            for i in 0..n {
                f(i, i, i);
            }
            return;
        }
        let rank = self.out_dims.len();
        let mut idx = vec![0usize; rank];
        let (mut ia, mut ib) = (0usize, 0usize);
        for o in 0..n {
            f(o, ia, ib);
            for ax in (0..rank).rev() {
                idx[ax] += 1;
                ia += self.a_strides[ax];
                ib += self.b_strides[ax];
                if idx[ax] < self.out_dims[ax] {
                    break;
                }
                ia -= self.a_strides[ax] * idx[ax];
                ib -= self.b_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
}
