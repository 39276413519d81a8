//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature these dispatch to rayon; without it they are
//! plain iterator loops. Callers pick [`Execution::Serial`] explicitly when
//! they need the work to stay on the current thread (metered timing reads
//! thread-local counters).

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

impl Execution {
    /// `Parallel` only when the crate was built with the `parallel` feature.
    pub fn effective(self) -> Execution {
        if cfg!(feature = "parallel") {
            self
        } else {
            Execution::Serial
        }
    }
}

pub fn all<T, F>(exec: Execution, items: &[T], f: F) -> bool
where
    T: Sync,
    F: Fn(usize, &T) -> bool + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().enumerate().all(|(i, t)| f(i, t)),
        _ => items.iter().enumerate().all(|(i, t)| f(i, t)),
    }
}

pub fn map<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items.par_iter().map(f).collect(),
        _ => items.iter().map(f).collect(),
    }
}

/// Applies `f` to every element mutably; results come back in index order.
pub fn map_mut<T, U, F>(exec: Execution, items: &mut [T], f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(usize, &mut T) -> U + Sync + Send,
{
    match exec.effective() {
        #[cfg(feature = "parallel")]
        Execution::Parallel => items
            .par_iter_mut()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect(),
        _ => items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serial_and_parallel_agree() {
        let v: Vec<u32> = (0..1000).collect();
        for exec in [Execution::Serial, Execution::Parallel] {
            assert!(all(exec, &v, |i, x| *x as usize == i));
            assert_eq!(map(exec, &v, |x| x * 2)[999], 1998);
            let mut w = v.clone();
            let out = map_mut(exec, &mut w, |i, x| {
                *x += 1;
                i
            });
            assert_eq!(out, (0..1000).collect::<Vec<_>>());
            assert_eq!(w[0], 1);
        }
    }
}
