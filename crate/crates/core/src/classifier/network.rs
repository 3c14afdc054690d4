//! Stacked LSTM with a single sigmoid output unit, forward and backward
//! passes over a whole mini-batch.
//!
//! Sequences are laid out time-major: row `t·B + b` of every `(T·B)×n`
//! matrix belongs to sample `b` at step `t`. Gate order inside the `4H`
//! pre-activation is input, forget, cell, output.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LstmLayer {
    /// `I × 4H`.
    pub w: Array2<f64>,
    /// `H × 4H`.
    pub u: Array2<f64>,
    /// `4H`.
    pub b: Array1<f64>,
}

impl LstmLayer {
    fn hidden(&self) -> usize {
        self.u.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Network {
    pub layers: Vec<LstmLayer>,
    /// `H_last`.
    pub out_w: Array1<f64>,
    /// Length 1.
    pub out_b: Array1<f64>,
}

struct LayerTrace {
    input: Array2<f64>,
    /// Post-activation gates, `(T·B) × 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
}

pub(crate) struct Trace {
    batch: usize,
    layers: Vec<LayerTrace>,
    /// Row of the top layer output read for each sample.
    rows: Vec<usize>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn glorot<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-limit..limit))
}

/// `rows × cols` matrix with orthonormal rows (or columns, whichever is
/// shorter), from Gram-Schmidt on a Gaussian matrix.
fn orthogonal<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let (n, k) = (rows.max(cols), rows.min(cols));
    let mut a = Array2::<f64>::from_shape_simple_fn((n, k), || StandardNormal.sample(rng));
    for j in 0..k {
        for p in 0..j {
            let proj = a.column(j).dot(&a.column(p));
            let prev = a.column(p).to_owned();
            a.column_mut(j).scaled_add(-proj, &prev);
        }
        let norm = a.column(j).dot(&a.column(j)).sqrt();
        a.column_mut(j).mapv_inplace(|v| v / norm);
    }
    if rows >= cols {
        a
    } else {
        a.reversed_axes().as_standard_layout().to_owned()
    }
}

impl Network {
    pub fn init<R: Rng>(input: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut fan_in = input;
        for &h in hidden {
            let mut b = Array1::zeros(4 * h);
            b.slice_mut(s![h..2 * h]).fill(1.0);
            layers.push(LstmLayer {
                w: glorot(fan_in, 4 * h, rng),
                u: orthogonal(h, 4 * h, rng),
                b,
            });
            fan_in = h;
        }
        let out_w = glorot(fan_in, 1, rng).into_shape_with_order(fan_in).expect("column");
        Self {
            layers,
            out_w,
            out_b: Array1::zeros(1),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| LstmLayer {
                    w: Array2::zeros(l.w.raw_dim()),
                    u: Array2::zeros(l.u.raw_dim()),
                    b: Array1::zeros(l.b.raw_dim()),
                })
                .collect(),
            out_w: Array1::zeros(self.out_w.raw_dim()),
            out_b: Array1::zeros(1),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers.iter().map(LstmLayer::hidden).collect()
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w.shape().to_vec());
            out.push(l.u.shape().to_vec());
            out.push(l.b.shape().to_vec());
        }
        out.push(self.out_w.shape().to_vec());
        out.push(self.out_b.shape().to_vec());
        out
    }

    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for l in &self.layers {
            out.push(l.w.as_slice().expect("standard layout"));
            out.push(l.u.as_slice().expect("standard layout"));
            out.push(l.b.as_slice().expect("standard layout"));
        }
        out.push(self.out_w.as_slice().expect("standard layout"));
        out.push(self.out_b.as_slice().expect("standard layout"));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w.as_slice_mut().expect("standard layout"));
            out.push(l.u.as_slice_mut().expect("standard layout"));
            out.push(l.b.as_slice_mut().expect("standard layout"));
        }
        out.push(self.out_w.as_slice_mut().expect("standard layout"));
        out.push(self.out_b.as_slice_mut().expect("standard layout"));
        out
    }

    /// Rebuilds a network of the given layout from flat tensors in
    /// [`Network::tensors`] order.
    pub fn from_tensors(input: usize, hidden: &[usize], tensors: Vec<Vec<f64>>) -> Option<Self> {
        if tensors.len() != 3 * hidden.len() + 2 {
            return None;
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        let mut fan_in = input;
        for &h in hidden {
            layers.push(LstmLayer {
                w: Array2::from_shape_vec((fan_in, 4 * h), it.next()?).ok()?,
                u: Array2::from_shape_vec((h, 4 * h), it.next()?).ok()?,
                b: Array1::from_shape_vec(4 * h, it.next()?).ok()?,
            });
            fan_in = h;
        }
        let out_w = Array1::from_shape_vec(fan_in, it.next()?).ok()?;
        let out_b = Array1::from_shape_vec(1, it.next()?).ok()?;
        Some(Self {
            layers,
            out_w,
            out_b,
        })
    }

    /// Logits for a batch of `batch` sequences; `last[b]` is the step whose
    /// top-layer output feeds the sigmoid unit for sample `b`.
    pub fn forward(&self, x: Array2<f64>, batch: usize, last: &[usize]) -> (Array1<f64>, Trace) {
        assert_eq!(last.len(), batch);
        let steps = x.nrows() / batch;
        let mut input = x;
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let trace = layer_forward(layer, input, batch, steps);
            input = trace.hidden.clone();
            traces.push(trace);
        }
        let rows: Vec<usize> = last.iter().enumerate().map(|(b, &t)| t * batch + b).collect();
        let top = &traces.last().expect("at least one layer").hidden;
        let logits = rows
            .iter()
            .map(|&r| top.row(r).dot(&self.out_w) + self.out_b[0])
            .collect();
        (
            logits,
            Trace {
                batch,
                layers: traces,
                rows,
            },
        )
    }

    /// Parameter gradients given `dlogits[b] = ∂L/∂logit_b`.
    pub fn backward(&self, trace: &Trace, dlogits: &Array1<f64>) -> Network {
        let mut grads = self.zeros_like();
        let top = &trace.layers.last().expect("at least one layer").hidden;
        let mut dh = Array2::<f64>::zeros(top.raw_dim());
        for (&r, &g) in trace.rows.iter().zip(dlogits) {
            grads.out_w.scaled_add(g, &top.row(r));
            grads.out_b[0] += g;
            dh.row_mut(r).scaled_add(g, &self.out_w);
        }
        for (l, (layer, lt)) in self.layers.iter().zip(&trace.layers).enumerate().rev() {
            let (dx, g) = layer_backward(layer, lt, dh, trace.batch, l > 0);
            grads.layers[l] = g;
            match dx {
                Some(dx) => dh = dx,
                None => break,
            }
        }
        grads
    }
}

fn layer_forward(layer: &LstmLayer, input: Array2<f64>, batch: usize, steps: usize) -> LayerTrace {
    let h = layer.hidden();
    let mut gates = input.dot(&layer.w);
    gates += &layer.b;
    let mut cells = Array2::<f64>::zeros((steps * batch, h));
    let mut tanh_cells = Array2::<f64>::zeros((steps * batch, h));
    let mut hidden = Array2::<f64>::zeros((steps * batch, h));
    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        if t > 0 {
            let prev = hidden.slice(s![(t - 1) * batch..t * batch, ..]);
            let rec = prev.dot(&layer.u);
            gates.slice_mut(s![rows.clone(), ..]).scaled_add(1.0, &rec);
        }
        for b in 0..batch {
            let r = t * batch + b;
            for j in 0..h {
                let i = sigmoid(gates[[r, j]]);
                let f = sigmoid(gates[[r, h + j]]);
                let g = gates[[r, 2 * h + j]].tanh();
                let o = sigmoid(gates[[r, 3 * h + j]]);
                gates[[r, j]] = i;
                gates[[r, h + j]] = f;
                gates[[r, 2 * h + j]] = g;
                gates[[r, 3 * h + j]] = o;
                let c_prev = if t > 0 { cells[[r - batch, j]] } else { 0.0 };
                let c = f * c_prev + i * g;
                let tc = c.tanh();
                cells[[r, j]] = c;
                tanh_cells[[r, j]] = tc;
                hidden[[r, j]] = o * tc;
            }
        }
    }
    LayerTrace {
        input,
        gates,
        cells,
        tanh_cells,
        hidden,
    }
}

fn layer_backward(
    layer: &LstmLayer,
    trace: &LayerTrace,
    dh_out: Array2<f64>,
    batch: usize,
    want_dx: bool,
) -> (Option<Array2<f64>>, LstmLayer) {
    let h = layer.hidden();
    let n = trace.hidden.nrows();
    let steps = n / batch;
    let mut dz = Array2::<f64>::zeros((n, 4 * h));
    let mut dh_next = Array2::<f64>::zeros((batch, h));
    let mut dc_next = Array2::<f64>::zeros((batch, h));
    let ut = layer.u.t();
    for t in (0..steps).rev() {
        for b in 0..batch {
            let r = t * batch + b;
            for j in 0..h {
                let i = trace.gates[[r, j]];
                let f = trace.gates[[r, h + j]];
                let g = trace.gates[[r, 2 * h + j]];
                let o = trace.gates[[r, 3 * h + j]];
                let tc = trace.tanh_cells[[r, j]];
                let c_prev = if t > 0 { trace.cells[[r - batch, j]] } else { 0.0 };
                let dh = dh_out[[r, j]] + dh_next[[b, j]];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[[b, j]];
                dc_next[[b, j]] = dc * f;
                dz[[r, j]] = dc * g * i * (1.0 - i);
                dz[[r, h + j]] = dc * c_prev * f * (1.0 - f);
                dz[[r, 2 * h + j]] = dc * i * (1.0 - g * g);
                dz[[r, 3 * h + j]] = d_o * o * (1.0 - o);
            }
        }
        if t > 0 {
            dh_next = dz.slice(s![t * batch..(t + 1) * batch, ..]).dot(&ut);
        }
    }
    let grad_w = trace.input.t().dot(&dz);
    let grad_b = dz.sum_axis(Axis(0));
    let grad_u = if steps > 1 {
        let prev: ArrayView2<f64> = trace.hidden.slice(s![..(steps - 1) * batch, ..]);
        prev.t().dot(&dz.slice(s![batch.., ..]))
    } else {
        Array2::zeros(layer.u.raw_dim())
    };
    let dx = want_dx.then(|| dz.dot(&layer.w.t()));
    (
        dx,
        LstmLayer {
            w: grad_w,
            u: grad_u,
            b: grad_b,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let q = orthogonal(5, 20, &mut rng);
        let gram = q.dot(&q.t());
        for i in 0..5 {
            for j in 0..5 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn init_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Network::init(7, &[4, 3], &mut rng);
        assert_eq!(
            net.shapes(),
            vec![vec![7, 16], vec![4, 16], vec![16], vec![4, 12], vec![3, 12], vec![12], vec![3], vec![1]]
        );
        assert!(net.layers[0].b.slice(s![4..8]).iter().all(|&v| v == 1.0));
        let copy = Network::from_tensors(7, &[4, 3], net.tensors().iter().map(|t| t.to_vec()).collect());
        assert_eq!(copy.unwrap(), net);
    }
}
