//! Operation dispatch keyed by `(operation, backend)`.
//!
//! Every public operation in this crate resolves its kernel here using the
//! backend tag of its first image argument. When the accelerated backend has no
//! kernel for an operation and fallback is enabled, the reference kernel runs
//! instead, a warning is logged once per process and operation, and the result
//! is still tagged with the caller's backend.

use std::any::Any;
use std::collections::{BTreeSet, HashMap};
use std::sync::{Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::exec;
use crate::image::{Backend, NdImage};

/// Re-tags every image inside an operation result.
pub trait Retag {
    fn retag(self, backend: Backend) -> Self;
}

impl Retag for NdImage {
    fn retag(self, backend: Backend) -> Self {
        self.tagged(backend)
    }
}

impl<T: Retag> Retag for Vec<T> {
    fn retag(self, backend: Backend) -> Self {
        self.into_iter().map(|v| v.retag(backend)).collect()
    }
}

impl<A: Retag, B: Retag> Retag for (A, B) {
    fn retag(self, backend: Backend) -> Self {
        (self.0.retag(backend), self.1.retag(backend))
    }
}

macro_rules! retag_noop {
    ($($t:ty),*) => {
        $(impl Retag for $t {
            fn retag(self, _: Backend) -> Self {
                self
            }
        })*
    };
}
pub(crate) use retag_noop;

retag_noop!(f32, f64, usize, bool);

/// Declares a reference and an accelerated kernel that forward to one
/// implementation taking a trailing `parallel: bool`.
macro_rules! kernel_pair {
    ($reference:ident, $accelerated:ident, $imp:path, ($($arg:ident: $ty:ty),*) -> $ret:ty) => {
        fn $reference($($arg: $ty),*) -> $ret {
            $imp($($arg,)* false)
        }
        fn $accelerated($($arg: $ty),*) -> $ret {
            $imp($($arg,)* true)
        }
    };
}
pub(crate) use kernel_pair;

/// A resolved kernel together with where it will run.
#[derive(Debug, Clone, Copy)]
pub struct Resolved<F> {
    pub kernel: F,
    /// Backend of the inputs; results carry this tag.
    pub tag: Backend,
    /// Backend whose kernel actually executes.
    pub executes_on: Backend,
}

impl<F> Resolved<F> {
    pub fn fell_back(&self) -> bool {
        self.tag != self.executes_on
    }
}

type Kernel = Box<dyn Any + Send + Sync>;

pub struct ExecutionRegistry {
    table: HashMap<&'static str, [Option<Kernel>; 2]>,
    fallback: bool,
    warned: Mutex<BTreeSet<String>>,
}

impl Default for ExecutionRegistry {
    fn default() -> Self {
        Self::with_defaults()
    }
}

impl ExecutionRegistry {
    pub fn empty() -> Self {
        ExecutionRegistry { table: HashMap::new(), fallback: true, warned: Mutex::new(BTreeSet::new()) }
    }

    /// Registry populated with every kernel this crate ships.
    pub fn with_defaults() -> Self {
        let mut reg = Self::empty();
        crate::ops::register(&mut reg);
        crate::filters::register(&mut reg);
        crate::transform::register(&mut reg);
        crate::morphthresh::register(&mut reg);
        crate::segmentation::register(&mut reg);
        crate::deconv::register(&mut reg);
        crate::metrics::register(&mut reg);
        debug_assert!(reg.table.values().all(|k| k[0].is_some()));
        reg
    }

    pub fn set_fallback(&mut self, enabled: bool) {
        self.fallback = enabled;
    }

    pub fn fallback_enabled(&self) -> bool {
        self.fallback
    }

    pub fn register<F: Copy + Send + Sync + 'static>(&mut self, op: &'static str, backend: Backend, kernel: F) {
        self.table.entry(op).or_default()[slot(backend)] = Some(Box::new(kernel));
    }

    /// Names of all operations, sorted.
    pub fn operations(&self) -> Vec<&'static str> {
        let mut ops: Vec<&'static str> =
            self.table.iter().filter(|(_, k)| k[0].is_some()).map(|(op, _)| *op).collect();
        ops.sort_unstable();
        ops
    }

    pub fn has_kernel(&self, op: &str, backend: Backend) -> bool {
        self.lookup(op, backend).is_some()
    }

    /// Operations that have emitted a fallback warning so far.
    pub fn fallback_warnings(&self) -> Vec<String> {
        self.warned.lock().map(|w| w.iter().cloned().collect()).unwrap_or_default()
    }

    fn lookup(&self, op: &str, backend: Backend) -> Option<&(dyn Any + Send + Sync)> {
        self.table.get(op).and_then(|k| k[slot(backend)].as_deref())
    }

    pub fn resolve<F: Copy + 'static>(&self, op: &str, images: &[&NdImage]) -> Result<Resolved<F>> {
        let tag = images.first().map(|i| i.backend()).unwrap_or(Backend::Reference);
        if let Some(other) = images.iter().map(|i| i.backend()).find(|&b| b != tag) {
            return Err(Error::MixedBackends { first: tag, other });
        }
        let reference = self.lookup(op, Backend::Reference).ok_or_else(|| Error::UnknownOperation(op.into()))?;
        let (kernel, executes_on) = match self.lookup(op, tag) {
            Some(k) => (k, tag),
            None if self.fallback => {
                self.warn_once(op, tag);
                (reference, Backend::Reference)
            }
            None => return Err(Error::NoImplementation { op: op.into(), backend: tag }),
        };
        let kernel = *kernel.downcast_ref::<F>().ok_or_else(|| Error::KernelSignature(op.into()))?;
        Ok(Resolved { kernel, tag, executes_on })
    }

    fn warn_once(&self, op: &str, backend: Backend) {
        let mut warned = match self.warned.lock() {
            Ok(w) => w,
            Err(poisoned) => poisoned.into_inner(),
        };
        if warned.insert(op.to_string()) {
            log::warn!("`{op}` has no {backend} kernel; falling back to the reference implementation");
        }
    }

    /// Resolves `op` for `images` and runs it, re-tagging the result with the
    /// inputs' backend.
    pub fn dispatch<F, R, C>(&self, op: &str, images: &[&NdImage], call: C) -> Result<R>
    where
        F: Copy + Send + 'static,
        R: Retag + Send,
        C: FnOnce(F) -> Result<R> + Send,
    {
        let r = self.resolve::<F>(op, images)?;
        let out = match r.executes_on {
            Backend::Accelerated => exec::install(move || call(r.kernel))?,
            Backend::Reference => call(r.kernel)?,
        };
        Ok(out.retag(r.tag))
    }
}

fn slot(backend: Backend) -> usize {
    match backend {
        Backend::Reference => 0,
        Backend::Accelerated => 1,
    }
}

static GLOBAL: OnceLock<ExecutionRegistry> = OnceLock::new();

/// The process-wide registry; built on first use and read-only afterwards.
pub fn registry() -> &'static ExecutionRegistry {
    GLOBAL.get_or_init(ExecutionRegistry::with_defaults)
}

pub(crate) fn dispatch<F, R, C>(op: &str, images: &[&NdImage], call: C) -> Result<R>
where
    F: Copy + Send + 'static,
    R: Retag + Send,
    C: FnOnce(F) -> Result<R> + Send,
{
    registry().dispatch(op, images, call)
}
