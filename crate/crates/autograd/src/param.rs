use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, RwLock};

use crate::{Tensor, Var};

static NEXT_PARAM: AtomicUsize = AtomicUsize::new(0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

struct ParamInner {
    id: ParamId,
    value: RwLock<Tensor>,
    trainable: bool,
}

/// Shared, mutable storage for a learnable tensor or a persistent buffer
/// (for example batch-norm running statistics).
#[derive(Clone)]
pub struct Param(Arc<ParamInner>);

impl std::fmt::Debug for Param {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Param")
            .field("id", &self.0.id)
            .field("shape", &self.shape())
            .field("trainable", &self.0.trainable)
            .finish()
    }
}

impl Param {
    fn with_flag(value: Tensor, trainable: bool) -> Self {
        let id = ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed));
        Param(Arc::new(ParamInner {
            id,
            value: RwLock::new(value),
            trainable,
        }))
    }

    pub fn new(value: Tensor) -> Self {
        Self::with_flag(value, true)
    }

    /// Non-trainable persistent state.
    pub fn buffer(value: Tensor) -> Self {
        Self::with_flag(value, false)
    }

    pub fn id(&self) -> ParamId {
        self.0.id
    }

    pub fn trainable(&self) -> bool {
        self.0.trainable
    }

    /// Graph leaf holding a snapshot of the current value. Buffers come back
    /// as constants.
    pub fn var(&self) -> Var {
        let value = self.value();
        if self.0.trainable {
            Var::param_leaf(value, self.0.id)
        } else {
            Var::constant(value)
        }
    }

    pub fn value(&self) -> Tensor {
        self.0.value.read().expect("param lock poisoned").clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.0.value.read().expect("param lock poisoned"))
    }

    pub fn update(&self, f: impl FnOnce(&mut Tensor)) {
        f(&mut self.0.value.write().expect("param lock poisoned"))
    }

    /// Replaces the value. Panics if the shape changes.
    pub fn set(&self, value: Tensor) {
        let mut guard = self.0.value.write().expect("param lock poisoned");
        assert_eq!(guard.shape(), value.shape(), "Param::set shape change");
        *guard = value;
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|v| v.shape().to_vec())
    }

    pub fn numel(&self) -> usize {
        self.with_value(|v| v.len())
    }
}
