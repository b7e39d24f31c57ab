//! Named-tensor views of model state, shared by checkpointing and checksums.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::data_io::{hex, Checkpoint, CheckpointKind, NamedTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Callback receiving `(name, shape, values)`.
pub type StateVisitor<'a, T> = dyn FnMut(&str, &[usize], &[T]) + 'a;
pub type StateVisitorMut<'a, T> = dyn FnMut(&str, &[usize], &mut [T]) + 'a;

/// Models expose every parameter and buffer under a stable name.
pub trait NamedState<T: Scalar> {
    fn visit_state(&self, f: &mut StateVisitor<'_, T>);
    fn visit_state_mut(&mut self, f: &mut StateVisitorMut<'_, T>);
}

pub(crate) fn to_checkpoint<T: Scalar>(
    model: &impl NamedState<T>,
    kind: CheckpointKind,
    config: serde_json::Value,
    seed: u64,
    epoch: u64,
) -> Checkpoint {
    let mut tensors = BTreeMap::new();
    model.visit_state(&mut |name, shape, data| {
        tensors.insert(
            name.to_string(),
            NamedTensor {
                shape: shape.to_vec(),
                data: data.iter().map(|v| v.as_f32()).collect(),
            },
        );
    });
    Checkpoint {
        kind,
        config,
        seed,
        epoch,
        tensors,
    }
}

/// Overwrites every tensor of `model` from `ckpt`, checking names and shapes.
pub(crate) fn load_state<T: Scalar>(model: &mut impl NamedState<T>, ckpt: &Checkpoint) -> Result<()> {
    let mut err = None;
    let mut seen = 0;
    model.visit_state_mut(&mut |name, shape, data| {
        if err.is_some() {
            return;
        }
        match ckpt.tensors.get(name) {
            Some(t) if t.shape == shape => {
                for (d, &v) in data.iter_mut().zip(&t.data) {
                    *d = T::from_f32(v).unwrap_or_else(T::nan);
                }
                seen += 1;
            }
            Some(t) => {
                err = Some(Error::Shape(format!(
                    "checkpoint tensor `{name}` is {:?}, model expects {shape:?}",
                    t.shape
                )))
            }
            None => err = Some(Error::Integrity(format!("checkpoint lacks tensor `{name}`"))),
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if seen != ckpt.tensors.len() {
        return Err(Error::Integrity(format!(
            "checkpoint holds {} tensors, model consumed {seen}",
            ckpt.tensors.len()
        )));
    }
    Ok(())
}

/// SHA-256 over every named tensor's bits (widened to `f64`).
pub fn state_checksum<T: Scalar>(model: &impl NamedState<T>) -> String {
    let mut h = Sha256::new();
    model.visit_state(&mut |name, shape, data| {
        h.update(name.as_bytes());
        for &d in shape {
            h.update((d as u64).to_le_bytes());
        }
        for &v in data {
            h.update(v.as_f64().to_bits().to_le_bytes());
        }
    });
    hex(&h.finalize())
}
