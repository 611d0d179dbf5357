//! Restartable in-process service hosting.
//!
//! A [`Node`] owns the current instance of a service plus a way to rebuild
//! it from its journal. When a call leaves the instance crashed, the node
//! swaps in a freshly recovered instance; the caller sees `UNAVAILABLE` and
//! retries against the new one.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use crate::api::WireError;

/// Something that hands out the current instance of a service.
pub trait ServiceHandle<T>: Send + Sync {
    fn call<R, E: WireError>(&self, f: impl FnOnce(&T) -> Result<R, E>) -> Result<R, E>;
}

impl<T: Send + Sync> ServiceHandle<T> for Arc<T> {
    fn call<R, E: WireError>(&self, f: impl FnOnce(&T) -> Result<R, E>) -> Result<R, E> {
        f(self)
    }
}

/// Services that can simulate a crash.
pub trait Crashable: Send + Sync {
    fn is_crashed(&self) -> bool;
}

type Rebuild<T> = Box<dyn Fn() -> Result<T, String> + Send + Sync>;
type Hook<T> = Box<dyn Fn(&Arc<T>) + Send + Sync>;

pub struct Node<T> {
    name: String,
    current: RwLock<Arc<T>>,
    rebuild: Rebuild<T>,
    on_restart: Option<Hook<T>>,
    restarts: AtomicU64,
}

impl<T> fmt::Debug for Node<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Node")
            .field("name", &self.name)
            .field("restarts", &self.restarts.load(Ordering::SeqCst))
            .finish()
    }
}

impl<T: Crashable> Node<T> {
    /// Builds the first instance with `rebuild`.
    pub fn start(
        name: impl Into<String>,
        rebuild: impl Fn() -> Result<T, String> + Send + Sync + 'static,
    ) -> Result<Arc<Self>, String> {
        let first = rebuild()?;
        Ok(Arc::new(Self {
            name: name.into(),
            current: RwLock::new(Arc::new(first)),
            rebuild: Box::new(rebuild),
            on_restart: None,
            restarts: AtomicU64::new(0),
        }))
    }

    /// Like [`Node::start`], running `hook` on every rebuilt instance.
    pub fn start_with_hook(
        name: impl Into<String>,
        rebuild: impl Fn() -> Result<T, String> + Send + Sync + 'static,
        hook: impl Fn(&Arc<T>) + Send + Sync + 'static,
    ) -> Result<Arc<Self>, String> {
        let first = rebuild()?;
        Ok(Arc::new(Self {
            name: name.into(),
            current: RwLock::new(Arc::new(first)),
            rebuild: Box::new(rebuild),
            on_restart: Some(Box::new(hook)),
            restarts: AtomicU64::new(0),
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn current(&self) -> Arc<T> {
        self.current.read().unwrap().clone()
    }

    pub fn restarts(&self) -> u64 {
        self.restarts.load(Ordering::SeqCst)
    }

    /// Replaces the current instance with one recovered from the journal.
    pub fn restart(&self) -> Result<Arc<T>, String> {
        let fresh = Arc::new((self.rebuild)()?);
        *self.current.write().unwrap() = fresh.clone();
        self.restarts.fetch_add(1, Ordering::SeqCst);
        if let Some(hook) = &self.on_restart {
            hook(&fresh);
        }
        Ok(fresh)
    }

    /// Restarts only if `seen` is still the current instance.
    fn restart_if_current(&self, seen: &Arc<T>) {
        let is_current = Arc::ptr_eq(&self.current(), seen);
        if is_current {
            // A failed rebuild leaves the crashed instance in place; it keeps
            // answering UNAVAILABLE.
            let _ = self.restart();
        }
    }
}

impl<T: Crashable> ServiceHandle<T> for Arc<Node<T>> {
    fn call<R, E: WireError>(&self, f: impl FnOnce(&T) -> Result<R, E>) -> Result<R, E> {
        let svc = self.current();
        let out = f(&svc);
        if svc.is_crashed() {
            self.restart_if_current(&svc);
        }
        out
    }
}
