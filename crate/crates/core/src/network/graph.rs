//! Reverse-mode differentiation over a recorded tape of tensor ops.
//!
//! Nodes are appended in evaluation order, so walking the tape backwards
//! from the loss visits every consumer before its producers.

use std::collections::BTreeMap;

use rand::Rng;

use super::kernels::{self, ConvGeometry};
use super::tensor::Tensor;
use super::{config::ConvSpec, NetworkError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

/// Index of a parameter inside a [`ParamStore`](super::model::ParamStore).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        geom: ConvGeometry,
        cols: Vec<f64>,
    },
    Linear {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    LeakyRelu {
        input: NodeId,
        slope: f64,
    },
    /// `mask` holds 0 or `1 / (1 − rate)` per element.
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    Flatten {
        input: NodeId,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    Loss6 {
        pred: NodeId,
        truth: [f64; 6],
        k: f64,
    },
    Sum {
        parts: Vec<NodeId>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Parameter gradients produced by [`Graph::backward`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    by_param: BTreeMap<ParamId, Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.by_param.get(&id).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.by_param.iter().map(|(k, v)| (*k, v.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.by_param.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_param.is_empty()
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn shape_err(msg: impl Into<String>) -> NetworkError {
    NetworkError::ShapeMismatch(msg.into())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node, NetworkError> {
        self.nodes.get(id.0).ok_or(NetworkError::GraphNotBuilt)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient slot filled by the last [`backward`](Self::backward).
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].value.grad()
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, id: ParamId, value: Tensor) -> NodeId {
        self.push(value, Op::Param(id))
    }

    /// Cross-correlation of a `(C, H, W)` input with `(O, C, K, K)` weights.
    pub fn conv2d(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
        spec: ConvSpec,
    ) -> Result<NodeId, NetworkError> {
        let x = &self.node(input)?.value;
        let &[c, h, w] = x.shape() else {
            return Err(shape_err(format!(
                "conv2d input must be (C, H, W), got {:?}",
                x.shape()
            )));
        };
        if c != spec.in_channels {
            return Err(shape_err(format!(
                "conv2d expects {} input channels, got {c}",
                spec.in_channels
            )));
        }
        let wt = &self.node(weight)?.value;
        let bs = &self.node(bias)?.value;
        if wt.len() != spec.weight_count() || bs.len() != spec.out_channels {
            return Err(shape_err(
                "conv2d weight or bias size does not match its spec",
            ));
        }
        let geom = ConvGeometry::new(spec, h, w)
            .ok_or_else(|| shape_err(format!("conv2d on {h}x{w} input yields an empty map")))?;
        let (out, cols) = kernels::conv2d_forward(x.data(), wt.data(), bs.data(), &geom);
        let value = Tensor::new(vec![spec.out_channels, geom.out_h, geom.out_w], out)
            .expect("conv output shape");
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
                cols,
            },
        ))
    }

    /// `W x + b` for a flat input; `W` is `(out, in)`.
    pub fn linear(
        &mut self,
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    ) -> Result<NodeId, NetworkError> {
        let x = &self.node(input)?.value;
        let wt = &self.node(weight)?.value;
        let bs = &self.node(bias)?.value;
        if x.shape().len() != 1 || wt.shape() != [bs.len(), x.len()] {
            return Err(shape_err(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                wt.shape(),
                bs.shape()
            )));
        }
        let out = kernels::linear_forward(x.data(), wt.data(), bs.data());
        Ok(self.push(
            Tensor::from_vec(out),
            Op::Linear {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> Result<NodeId, NetworkError> {
        let x = &self.node(input)?.value;
        let data = x
            .data()
            .iter()
            .map(|v| kernels::leaky_relu(*v, slope))
            .collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        Ok(self.push(value, Op::LeakyRelu { input, slope }))
    }

    /// Inverted dropout. Outside training it records an identity op and
    /// draws nothing from `rng`.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: NodeId,
        rate: f64,
        training: bool,
        rng: &mut R,
    ) -> Result<NodeId, NetworkError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(NetworkError::InvalidConfig(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        let x = &self.node(input)?.value;
        let mask: Vec<f64> = if training && rate > 0.0 {
            let keep = 1.0 / (1.0 - rate);
            (0..x.len())
                .map(|_| {
                    if rng.random::<f64>() < rate {
                        0.0
                    } else {
                        keep
                    }
                })
                .collect()
        } else {
            vec![1.0; x.len()]
        };
        let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        Ok(self.push(value, Op::Dropout { input, mask }))
    }

    pub fn flatten(&mut self, input: NodeId) -> Result<NodeId, NetworkError> {
        let x = self.node(input)?.value.data().to_vec();
        Ok(self.push(Tensor::from_vec(x), Op::Flatten { input }))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NetworkError> {
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.node(p)?.value.data());
        }
        Ok(self.push(
            Tensor::from_vec(data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Weighted pose loss on a 6-vector prediction; see [`super::loss::loss_6dof`].
    pub fn loss6(&mut self, pred: NodeId, truth: [f64; 6], k: f64) -> Result<NodeId, NetworkError> {
        let p = &self.node(pred)?.value;
        if p.len() != 6 {
            return Err(shape_err(format!(
                "pose loss needs a 6-vector prediction, got {:?}",
                p.shape()
            )));
        }
        let pred_arr: [f64; 6] = p.data().try_into().expect("length checked");
        let value = super::loss::loss_6dof_value(&pred_arr, &truth, k);
        Ok(self.push(Tensor::from_vec(vec![value]), Op::Loss6 { pred, truth, k }))
    }

    /// Sum of scalar nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> Result<NodeId, NetworkError> {
        let mut total = 0.0;
        for &p in parts {
            let v = &self.node(p)?.value;
            if v.len() != 1 {
                return Err(shape_err("sum takes scalar nodes"));
            }
            total += v.data()[0];
        }
        Ok(self.push(
            Tensor::from_vec(vec![total]),
            Op::Sum {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Back-propagates from a scalar node, filling every node's gradient
    /// slot and returning the gradients of all parameters it depends on.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients, NetworkError> {
        let root = self.nodes.get(loss.0).ok_or(NetworkError::GraphNotBuilt)?;
        if root.value.len() != 1 {
            return Err(shape_err("backward starts from a scalar node"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
            match &mut grads[id.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot => *slot = Some(g),
            }
        }

        let mut done: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        for idx in (0..=loss.0).rev() {
            // producers always precede consumers, so this slot is final
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input | Op::Param(_) => {}
                Op::Conv2d {
                    input,
                    weight,
                    bias,
                    geom,
                    cols,
                } => {
                    let w = self.nodes[weight.0].value.data();
                    let (dx, dw, db) = kernels::conv2d_backward(&g, cols, w, geom);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::Linear {
                    input,
                    weight,
                    bias,
                } => {
                    let x = self.nodes[input.0].value.data();
                    let w = self.nodes[weight.0].value.data();
                    let (dx, dw, db) = kernels::linear_backward(&g, x, w);
                    accumulate(&mut grads, *input, dx);
                    accumulate(&mut grads, *weight, dw);
                    accumulate(&mut grads, *bias, db);
                }
                Op::LeakyRelu { input, slope } => {
                    let x = self.nodes[input.0].value.data();
                    let dx = g
                        .iter()
                        .zip(x)
                        .map(|(gv, xv)| if *xv > 0.0 { *gv } else { gv * slope })
                        .collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Dropout { input, mask } => {
                    let dx = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate(&mut grads, *input, dx);
                }
                Op::Flatten { input } => accumulate(&mut grads, *input, g.clone()),
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for p in parts {
                        let n = self.nodes[p.0].value.len();
                        accumulate(&mut grads, *p, g[offset..offset + n].to_vec());
                        offset += n;
                    }
                }
                Op::Loss6 { pred, truth, k } => {
                    let p: [f64; 6] = self.nodes[pred.0]
                        .value
                        .data()
                        .try_into()
                        .expect("6-vector");
                    let dp = super::loss::loss_6dof_grad(&p, truth, *k).map(|v| v * g[0]);
                    accumulate(&mut grads, *pred, dp.to_vec());
                }
                Op::Sum { parts } => {
                    for p in parts {
                        accumulate(&mut grads, *p, vec![g[0]]);
                    }
                }
            }
            done[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for (idx, g) in done.into_iter().enumerate() {
            let Some(g) = g else { continue };
            if let Op::Param(pid) = self.nodes[idx].op {
                match out.by_param.get_mut(&pid) {
                    Some(existing) => existing.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => {
                        out.by_param.insert(pid, g.clone());
                    }
                }
            }
            self.nodes[idx]
                .value
                .set_grad(g)
                .expect("gradient matches value shape");
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_on_empty_graph_fails() {
        let mut g = Graph::new();
        assert!(matches!(
            g.backward(NodeId(0)),
            Err(NetworkError::GraphNotBuilt)
        ));
    }

    #[test]
    fn linear_quadratic_loss_matches_closed_form() {
        // L = (1/n)·Σ_i (x_i·w − y_i)², dL/dw = 2·xᵀ(xw − y)/n
        let xs = [[1.0, 2.0], [0.5, -1.0], [3.0, 0.25]];
        let ys = [1.0, -2.0, 0.5];
        let w = [0.3, -0.7];
        let n = xs.len() as f64;

        let mut g = Graph::new();
        let wn = g.param(ParamId(0), Tensor::new(vec![1, 2], w.to_vec()).unwrap());
        let bn = g.param(ParamId(1), Tensor::from_vec(vec![0.0]));
        let mut terms = Vec::new();
        for (x, y) in xs.iter().zip(ys) {
            let xn = g.input(Tensor::from_vec(x.to_vec()));
            let out = g.linear(xn, wn, bn).unwrap();
            // loss6 with p = (out, 0, 0) against (y, 0, 0) is (out − y)² / 3
            let z = g.input(Tensor::from_vec(vec![0.0; 5]));
            let pred = g.concat(&[out, z]).unwrap();
            terms.push(g.loss6(pred, [y, 0.0, 0.0, 0.0, 0.0, 0.0], 1.0).unwrap());
        }
        let total = g.sum(&terms).unwrap();
        let grads = g.backward(total).unwrap();
        let dw = grads.get(ParamId(0)).unwrap();

        let mut expected = [0.0; 2];
        for (x, y) in xs.iter().zip(ys) {
            let r = x[0] * w[0] + x[1] * w[1] - y;
            expected[0] += 2.0 * x[0] * r / n;
            expected[1] += 2.0 * x[1] * r / n;
        }
        // our total is Σ r²/3, the closed form is Σ r²/n with n = 3
        assert!((dw[0] - expected[0]).abs() < 1e-12 && (dw[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn shared_parameter_gradients_accumulate() {
        let mut g = Graph::new();
        let w = g.param(ParamId(0), Tensor::new(vec![1, 1], vec![2.0]).unwrap());
        let b = g.param(ParamId(1), Tensor::from_vec(vec![0.0]));
        let x = g.input(Tensor::from_vec(vec![3.0]));
        let y1 = g.linear(x, w, b).unwrap();
        let y2 = g.linear(x, w, b).unwrap();
        let s = g.sum(&[y1, y2]).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(ParamId(0)), Some(&[6.0][..]));
        assert_eq!(grads.get(ParamId(1)), Some(&[2.0][..]));
        assert_eq!(g.grad(x), Some(&[4.0][..]));
    }

    #[test]
    fn dropout_rate_zero_and_eval_are_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::new();
        let x = g.input(Tensor::from_vec(
            (0..100).map(|v| v as f64 - 50.0).collect(),
        ));
        let a = g.dropout(x, 0.0, true, &mut rng).unwrap();
        let b = g.dropout(x, 0.7, false, &mut rng).unwrap();
        assert_eq!(g.value(a), g.value(x));
        assert_eq!(g.value(b), g.value(x));
        assert!(g.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = Graph::new();
        let n = 1_000_000;
        let x = g.input(Tensor::filled(&[n], 1.0));
        let d = g.dropout(x, 0.5, true, &mut rng).unwrap();
        let out = g.value(d).data();
        let zero_frac = out.iter().filter(|v| **v == 0.0).count() as f64 / n as f64;
        let mean = out.iter().sum::<f64>() / n as f64;
        assert!((zero_frac - 0.5).abs() < 0.01, "{zero_frac}");
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
    }

    #[test]
    fn dropout_mask_is_seed_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            let mut g = Graph::new();
            let x = g.input(Tensor::filled(&[64], 2.0));
            let d = g.dropout(x, 0.5, true, &mut rng).unwrap();
            g.value(d).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn conv_shape_errors() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[3, 4, 4]));
        let spec = ConvSpec::new(2, 1, 3, 1);
        let w = g.param(ParamId(0), Tensor::zeros(&[spec.weight_count()]));
        let b = g.param(ParamId(1), Tensor::zeros(&[1]));
        assert!(matches!(
            g.conv2d(x, w, b, spec),
            Err(NetworkError::ShapeMismatch(_))
        ));
    }
}
