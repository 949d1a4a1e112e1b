//! Fully connected ReLU network stored inside the flat parameter vector.

use super::{ParamGroup, ParamLayout, Real};

/// Hidden layers use ReLU; the last layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    dims: Vec<usize>,
    weight: Vec<usize>,
    bias: Vec<usize>,
    act: Vec<usize>,
    act_len: usize,
    max_dim: usize,
}

impl Mlp {
    pub(crate) fn new(dims: &[usize], layout: &mut ParamLayout, prefix: &str) -> Self {
        assert!(dims.len() >= 2);
        let mut weight = Vec::new();
        let mut bias = Vec::new();
        let mut act = Vec::new();
        let mut act_len = 0;
        for k in 0..dims.len() - 1 {
            weight.push(layout.push(&format!("{prefix}.l{k}.weight"), vec![dims[k + 1], dims[k]], ParamGroup::Dense));
            bias.push(layout.push(&format!("{prefix}.l{k}.bias"), vec![dims[k + 1]], ParamGroup::Dense));
            act.push(act_len);
            act_len += dims[k + 1];
        }
        Self {
            max_dim: *dims.iter().max().unwrap(),
            dims: dims.to_vec(),
            weight,
            bias,
            act,
            act_len,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Length of the activation buffer `forward` fills.
    pub fn act_len(&self) -> usize {
        self.act_len
    }

    /// Length of the scratch buffer `backward` needs.
    pub fn scratch_len(&self) -> usize {
        2 * self.max_dim
    }

    pub fn weight_offset(&self, k: usize) -> usize {
        self.weight[k]
    }

    pub fn bias_offset(&self, k: usize) -> usize {
        self.bias[k]
    }

    pub fn output<'a, T>(&self, acts: &'a [T]) -> &'a [T] {
        let n = self.layers() - 1;
        &acts[self.act[n]..self.act[n] + self.dims[n + 1]]
    }

    pub fn forward<T: Real>(&self, p: &[T], input: &[T], acts: &mut [T]) {
        let last = self.layers() - 1;
        for k in 0..=last {
            let (fi, fo) = (self.dims[k], self.dims[k + 1]);
            let (prev, rest) = acts.split_at_mut(self.act[k]);
            let inp = if k == 0 { &input[..fi] } else { &prev[self.act[k - 1]..self.act[k - 1] + fi] };
            let out = &mut rest[..fo];
            for (o, slot) in out.iter_mut().enumerate() {
                let row = &p[self.weight[k] + o * fi..self.weight[k] + (o + 1) * fi];
                let mut acc = p[self.bias[k] + o];
                for (w, x) in row.iter().zip(inp) {
                    acc += *w * *x;
                }
                *slot = if k < last && acc < T::zero() { T::zero() } else { acc };
            }
        }
    }

    /// Accumulates parameter gradients into `g` and optionally writes the
    /// gradient with respect to the input.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Real>(
        &self,
        p: &[T],
        g: &mut [T],
        input: &[T],
        acts: &[T],
        d_out: &[T],
        mut d_input: Option<&mut [T]>,
        scratch: &mut [T],
    ) {
        let (a, b) = scratch.split_at_mut(self.max_dim);
        let (mut delta, mut next) = (a, b);
        let n = self.layers();
        delta[..self.dims[n]].copy_from_slice(&d_out[..self.dims[n]]);
        for k in (0..n).rev() {
            let (fi, fo) = (self.dims[k], self.dims[k + 1]);
            let inp = if k == 0 { &input[..fi] } else { &acts[self.act[k - 1]..self.act[k - 1] + fi] };
            for o in 0..fo {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                g[self.bias[k] + o] += d;
                let row = self.weight[k] + o * fi;
                for (gw, x) in g[row..row + fi].iter_mut().zip(inp) {
                    *gw += d * *x;
                }
            }
            if k == 0 && d_input.is_none() {
                break;
            }
            let nx = &mut next[..fi];
            nx.fill(T::zero());
            for o in 0..fo {
                let d = delta[o];
                if d == T::zero() {
                    continue;
                }
                let row = &p[self.weight[k] + o * fi..self.weight[k] + (o + 1) * fi];
                for (acc, w) in nx.iter_mut().zip(row) {
                    *acc += *w * d;
                }
            }
            if k > 0 {
                for (acc, x) in nx.iter_mut().zip(inp) {
                    if *x <= T::zero() {
                        *acc = T::zero();
                    }
                }
            } else if let Some(di) = d_input.as_deref_mut() {
                di[..fi].copy_from_slice(nx);
            }
            std::mem::swap(&mut delta, &mut next);
        }
    }
}
