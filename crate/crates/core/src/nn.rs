//! Batched multilayer perceptrons with hand-written backpropagation, generic
//! over `f32` (training, checkpoints) and `f64` (gradient checks), plus Adam.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + std::ops::AddAssign + 'static
{
    /// `C = alpha * A B + beta * C` with arbitrary strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (isize, isize),
        b: &[Self],
        b_strides: (isize, isize),
        beta: Self,
        c: &mut [Self],
        c_strides: (isize, isize),
    );

    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }

    #[inline]
    fn f64(self) -> f64 {
        self.to_f64().expect("finite")
    }
}

fn span(rows: usize, cols: usize, (rs, cs): (isize, isize)) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (isize, isize),
                b: &[Self],
                b_strides: (isize, isize),
                beta: Self,
                c: &mut [Self],
                c_strides: (isize, isize),
            ) {
                assert!(span(m, k, a_strides) <= a.len(), "gemm: A out of bounds");
                assert!(span(k, n, b_strides) <= b.len(), "gemm: B out of bounds");
                assert!(span(m, n, c_strides) <= c.len(), "gemm: C out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the asserts above keep every strided access in bounds.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0,
                        a_strides.1,
                        b.as_ptr(),
                        b_strides.0,
                        b_strides.1,
                        beta,
                        c.as_mut_ptr(),
                        c_strides.0,
                        c_strides.1,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x > T::of(20.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Architecture of one MLP: `hidden_layers` ReLU layers of width `hidden`
/// followed by a linear output layer. With `skip_at = Some(i)`, hidden layer
/// `i` receives `[previous activation, network input]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
    pub skip_at: Option<usize>,
    /// Zero the output layer at initialisation.
    pub zero_last: bool,
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    inp: usize,
    out: usize,
    w: usize,
    b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    spec: MlpSpec,
    layers: Vec<Layer>,
    pub params: Vec<T>,
}

/// Activations recorded by [`Mlp::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct Tape<T> {
    rows: usize,
    inputs: Vec<Vec<T>>,
    pub output: Vec<T>,
}

impl<T: Real> Mlp<T> {
    /// He-uniform weights, zero biases.
    pub fn new(spec: MlpSpec, rng: &mut impl Rng) -> Self {
        let mut mlp = Self::zeros(spec);
        let last = mlp.layers.len() - 1;
        for (i, l) in mlp.layers.clone().iter().enumerate() {
            if i == last && mlp.spec.zero_last {
                continue;
            }
            let bound = (6.0 / l.inp as f64).sqrt();
            for w in &mut mlp.params[l.w..l.w + l.inp * l.out] {
                *w = T::of(rng.gen_range(-bound..bound));
            }
        }
        mlp
    }

    pub fn zeros(spec: MlpSpec) -> Self {
        let mut layers = Vec::new();
        let mut off = 0;
        for i in 0..=spec.hidden_layers {
            let inp = if i == 0 {
                spec.input
            } else if spec.skip_at == Some(i) {
                spec.hidden + spec.input
            } else {
                spec.hidden
            };
            let out = if i == spec.hidden_layers { spec.output } else { spec.hidden };
            layers.push(Layer {
                inp,
                out,
                w: off,
                b: off + inp * out,
            });
            off += inp * out + out;
        }
        Self {
            spec,
            layers,
            params: vec![T::zero(); off],
        }
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec.clone())
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            spec: self.spec.clone(),
            layers: self.layers.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
        }
    }

    pub fn with_params(spec: MlpSpec, params: Vec<T>) -> Option<Self> {
        let mut m = Self::zeros(spec);
        (m.params.len() == params.len()).then(|| {
            m.params = params;
            m
        })
    }

    fn affine(&self, l: &Layer, x: &[T], rows: usize) -> Vec<T> {
        let mut z = Vec::with_capacity(rows * l.out);
        for _ in 0..rows {
            z.extend_from_slice(&self.params[l.b..l.b + l.out]);
        }
        // Z = X Wᵀ + b, W stored out x in row-major
        T::gemm(
            rows,
            l.inp,
            l.out,
            T::one(),
            x,
            (l.inp as isize, 1),
            &self.params[l.w..],
            (1, l.inp as isize),
            T::one(),
            &mut z,
            (l.out as isize, 1),
        );
        z
    }

    fn next_input(&self, layer: usize, z: Vec<T>, x: &[T], rows: usize) -> Vec<T> {
        let hidden = self.spec.hidden;
        let mut h = z;
        for v in &mut h {
            if *v < T::zero() {
                *v = T::zero();
            }
        }
        if self.spec.skip_at == Some(layer) {
            let inp = self.spec.input;
            let mut cat = Vec::with_capacity(rows * (hidden + inp));
            for r in 0..rows {
                cat.extend_from_slice(&h[r * hidden..(r + 1) * hidden]);
                cat.extend_from_slice(&x[r * inp..(r + 1) * inp]);
            }
            cat
        } else {
            h
        }
    }

    /// Forward pass over `rows` row-major inputs, keeping activations.
    pub fn forward(&self, x: &[T], rows: usize) -> Tape<T> {
        assert_eq!(x.len(), rows * self.spec.input, "mlp input shape");
        let mut inputs = Vec::with_capacity(self.layers.len());
        inputs.push(x.to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let z = self.affine(l, &inputs[i], rows);
            if i + 1 == self.layers.len() {
                return Tape {
                    rows,
                    inputs,
                    output: z,
                };
            }
            let next = self.next_input(i + 1, z, x, rows);
            inputs.push(next);
        }
        unreachable!("an mlp always has an output layer")
    }

    /// Forward pass without keeping activations.
    pub fn infer(&self, x: &[T], rows: usize) -> Vec<T> {
        assert_eq!(x.len(), rows * self.spec.input, "mlp input shape");
        let mut cur = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let z = self.affine(l, &cur, rows);
            if i + 1 == self.layers.len() {
                return z;
            }
            cur = self.next_input(i + 1, z, x, rows);
        }
        unreachable!("an mlp always has an output layer")
    }

    /// Accumulates parameter gradients into `grad` (same layout as `params`)
    /// and returns the gradient with respect to the input rows.
    pub fn backward(&self, tape: &Tape<T>, d_out: &[T], grad: &mut [T]) -> Vec<T> {
        let rows = tape.rows;
        let inp = self.spec.input;
        let hidden = self.spec.hidden;
        assert_eq!(d_out.len(), rows * self.spec.output);
        assert_eq!(grad.len(), self.params.len());
        let mut d_input = vec![T::zero(); rows * inp];
        let mut dz = d_out.to_vec();
        for (i, l) in self.layers.iter().enumerate().rev() {
            let x = &tape.inputs[i];
            // dW += dZᵀ X
            T::gemm(
                l.out,
                rows,
                l.inp,
                T::one(),
                &dz,
                (1, l.out as isize),
                x,
                (l.inp as isize, 1),
                T::one(),
                &mut grad[l.w..l.w + l.inp * l.out],
                (l.inp as isize, 1),
            );
            for r in 0..rows {
                for o in 0..l.out {
                    grad[l.b + o] += dz[r * l.out + o];
                }
            }
            let mut dx = vec![T::zero(); rows * l.inp];
            // dX = dZ W
            T::gemm(
                rows,
                l.out,
                l.inp,
                T::one(),
                &dz,
                (l.out as isize, 1),
                &self.params[l.w..],
                (l.inp as isize, 1),
                T::zero(),
                &mut dx,
                (l.inp as isize, 1),
            );
            if i == 0 {
                for (d, v) in d_input.iter_mut().zip(&dx) {
                    *d += *v;
                }
                break;
            }
            let mut dh = Vec::with_capacity(rows * hidden);
            for r in 0..rows {
                let row = &dx[r * l.inp..(r + 1) * l.inp];
                let act = &x[r * l.inp..r * l.inp + hidden];
                for k in 0..hidden {
                    dh.push(if act[k] > T::zero() { row[k] } else { T::zero() });
                }
                if self.spec.skip_at == Some(i) {
                    for k in 0..inp {
                        d_input[r * inp + k] += row[hidden + k];
                    }
                }
            }
            dz = dh;
        }
        d_input
    }
}

/// Adam moments for one flat parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }
}

impl Adam {
    /// One bias-corrected update; `step` counts from 1.
    pub fn update<T: Real>(&self, state: &mut AdamState<T>, params: &mut [T], grads: &[T], lr: f64, step: u64) {
        self.update_range(state, params, grads, lr, step, 0..params.len());
    }

    /// Updates only the entries in `range`, leaving the rest (and their moments) untouched.
    pub fn update_range<T: Real>(
        &self,
        state: &mut AdamState<T>,
        params: &mut [T],
        grads: &[T],
        lr: f64,
        step: u64,
        range: std::ops::Range<usize>,
    ) {
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = 1.0 - self.beta1.powi(step as i32);
        let c2 = 1.0 - self.beta2.powi(step as i32);
        let step_size = T::of(lr / c1);
        let c2_sqrt = T::of(c2.sqrt());
        let eps = T::of(self.eps);
        for i in range {
            let g = grads[i];
            state.m[i] = b1 * state.m[i] + (T::one() - b1) * g;
            state.v[i] = b2 * state.v[i] + (T::one() - b2) * g * g;
            let denom = state.v[i].sqrt() / c2_sqrt + eps;
            params[i] = params[i] - step_size * state.m[i] / denom;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(skip: Option<usize>) -> MlpSpec {
        MlpSpec {
            input: 5,
            hidden: 7,
            hidden_layers: 3,
            output: 3,
            skip_at: skip,
            zero_last: false,
        }
    }

    fn loss(m: &Mlp<f64>, x: &[f64], rows: usize) -> f64 {
        m.infer(x, rows).iter().enumerate().map(|(i, y)| y * y * (1.0 + i as f64 * 0.1)).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        for skip in [None, Some(2)] {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let m: Mlp<f64> = Mlp::new(spec(skip), &mut rng);
            let rows = 4;
            let x: Vec<f64> = (0..rows * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let tape = m.forward(&x, rows);
            let d_out: Vec<f64> =
                tape.output.iter().enumerate().map(|(i, y)| 2.0 * y * (1.0 + i as f64 * 0.1)).collect();
            let mut grad = vec![0.0; m.param_count()];
            let dx = m.backward(&tape, &d_out, &mut grad);
            let e = 1e-6;
            for p in 0..m.param_count() {
                let mut mp = m.clone();
                mp.params[p] += e;
                let mut mm = m.clone();
                mm.params[p] -= e;
                let fd = (loss(&mp, &x, rows) - loss(&mm, &x, rows)) / (2.0 * e);
                assert!((fd - grad[p]).abs() < 1e-6 * (1.0 + fd.abs()), "param {p}: {fd} vs {}", grad[p]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += e;
                let mut xm = x.clone();
                xm[i] -= e;
                let fd = (loss(&m, &xp, rows) - loss(&m, &xm, rows)) / (2.0 * e);
                assert!((fd - dx[i]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn zero_last_layer_gives_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m: Mlp<f32> = Mlp::new(
            MlpSpec {
                zero_last: true,
                ..spec(None)
            },
            &mut rng,
        );
        assert!(m.infer(&[0.3; 10], 2).iter().all(|y| *y == 0.0));
    }

    #[test]
    fn infer_equals_forward_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m: Mlp<f32> = Mlp::new(spec(Some(1)), &mut rng);
        let x: Vec<f32> = (0..15).map(|i| (i as f32 * 0.37).sin()).collect();
        assert_eq!(m.infer(&x, 3), m.forward(&x, 3).output);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let adam = Adam::default();
        let mut st = AdamState::<f32>::new(3);
        let mut p = vec![1.0f32, -2.0, 0.5];
        adam.update(&mut st, &mut p, &[0.0; 3], 1e-3, 1);
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let adam = Adam::default();
        let mut st = AdamState::<f64>::new(2);
        let mut p = vec![0.0, 0.0];
        adam.update(&mut st, &mut p, &[3.0, -0.5], 0.01, 1);
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
    }
}
