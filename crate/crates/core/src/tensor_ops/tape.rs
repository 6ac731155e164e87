use std::sync::atomic::{AtomicU64, Ordering};

use super::*;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a recorded forward op. Only valid on the tape that issued it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Record<T> {
    RegionLinear { v: Tensor<T>, p: Tensor<T> },
    GlobalAvgPool { input_shape: Vec<usize> },
    DepthwiseConv { v: Tensor<T>, k: Tensor<T> },
    Relu { input: Tensor<T> },
    MaxTrailing { input_shape: Vec<usize>, offsets: Vec<usize> },
    Cosine { u: Tensor<T>, w: Tensor<T> },
}

/// Records forward ops with their saved operands so that each op's adjoint can
/// be evaluated later. There is no graph traversal: callers chain adjoints
/// themselves in reverse order.
#[derive(Debug)]
pub struct Tape<T> {
    id: u64,
    records: Vec<Record<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            records: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn push(&mut self, record: Record<T>) -> NodeId {
        self.records.push(record);
        NodeId {
            tape: self.id,
            index: self.records.len() - 1,
        }
    }

    pub fn region_linear(&mut self, v: &Tensor<T>, p: &Tensor<T>) -> Result<(Tensor<T>, NodeId)> {
        let out = region_linear(v, p)?;
        let id = self.push(Record::RegionLinear {
            v: v.clone(),
            p: p.clone(),
        });
        Ok((out, id))
    }

    pub fn global_avg_pool(&mut self, v: &Tensor<T>) -> Result<(Tensor<T>, NodeId)> {
        let out = global_avg_pool(v)?;
        let id = self.push(Record::GlobalAvgPool {
            input_shape: v.shape().to_vec(),
        });
        Ok((out, id))
    }

    pub fn depthwise_conv_valid(
        &mut self,
        v: &Tensor<T>,
        k: &Tensor<T>,
    ) -> Result<(Tensor<T>, NodeId)> {
        let out = depthwise_conv_valid(v, k)?;
        let id = self.push(Record::DepthwiseConv {
            v: v.clone(),
            k: k.clone(),
        });
        Ok((out, id))
    }

    pub fn relu(&mut self, t: &Tensor<T>) -> (Tensor<T>, NodeId) {
        let out = relu(t);
        let id = self.push(Record::Relu { input: t.clone() });
        (out, id)
    }

    pub fn max_argmax_trailing(
        &mut self,
        t: &Tensor<T>,
        axes: usize,
    ) -> Result<(MaxArgmax<T>, NodeId)> {
        let out = max_argmax_trailing(t, axes)?;
        let id = self.push(Record::MaxTrailing {
            input_shape: t.shape().to_vec(),
            offsets: out.offsets.clone(),
        });
        Ok((out, id))
    }

    pub fn cosine(&mut self, u: &Tensor<T>, w: &Tensor<T>) -> Result<(f64, NodeId)> {
        let out = cosine(u, w)?;
        let id = self.push(Record::Cosine {
            u: u.clone(),
            w: w.clone(),
        });
        Ok((out, id))
    }

    /// Gradients with respect to each input of the recorded op, in argument
    /// order. Ops with a single tensor input return a one-element vector.
    pub fn adjoint(&self, node: NodeId, grad_out: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        if node.tape != self.id {
            return Err(RsanError::Usage(format!(
                "node {} was recorded on another tape",
                node.index
            )));
        }
        let record = self.records.get(node.index).ok_or_else(|| {
            RsanError::Usage(format!("node {} is not recorded on this tape", node.index))
        })?;
        match record {
            Record::RegionLinear { v, p } => {
                let (gv, gp) = region_linear_backward(v, p, grad_out)?;
                Ok(vec![gv, gp])
            }
            Record::GlobalAvgPool { input_shape } => {
                Ok(vec![global_avg_pool_backward(input_shape, grad_out)?])
            }
            Record::DepthwiseConv { v, k } => {
                let (gv, gk) = depthwise_conv_valid_backward(v, k, grad_out)?;
                Ok(vec![gv, gk])
            }
            Record::Relu { input } => Ok(vec![relu_backward(input, grad_out)?]),
            Record::MaxTrailing {
                input_shape,
                offsets,
            } => Ok(vec![max_backward(input_shape, offsets, grad_out)?]),
            Record::Cosine { u, w } => {
                if grad_out.numel() != 1 {
                    return Err(RsanError::dim(
                        "cosine adjoint",
                        format!("upstream must be scalar, got {:?}", grad_out.shape()),
                    ));
                }
                let (gu, gw) = cosine_backward(u, w, grad_out.data()[0].to_acc())?;
                Ok(vec![gu, gw])
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn foreign_node_is_usage_error() {
        let mut a = Tape::<f64>::new();
        let b = Tape::<f64>::new();
        let (_, id) = a.relu(&Tensor::ones(&[2]));
        assert!(matches!(
            b.adjoint(id, &Tensor::ones(&[2])),
            Err(RsanError::Usage(_))
        ));
        assert!(a.adjoint(id, &Tensor::ones(&[2])).is_ok());
    }

    #[test]
    fn adjoint_checks_upstream_shape() {
        let mut tape = Tape::<f64>::new();
        let v = Tensor::ones(&[2, 3, 3]);
        let (_, id) = tape.region_linear(&v, &Tensor::ones(&[2, 4])).unwrap();
        assert!(tape.adjoint(id, &Tensor::ones(&[4, 3, 2])).is_err());
    }
}
