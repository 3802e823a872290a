//! Configuration, field I/O and the command implementations behind the
//! `equidesign` binary.

pub mod commands;
pub mod config;
pub mod fields;
pub mod validate;

pub use commands::{forward, gradcheck, optimize, CommandOutcome};
pub use config::{Overrides, RunConfig};
pub use validate::validate;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item on at most `threads` scoped workers; results keep
/// the input order.
pub fn parallel_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> R + Sync,
) -> Vec<R> {
    let workers = threads.clamp(1, items.len().max(1));
    if workers == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= items.len() {
                    break;
                }
                let r = f(&items[k]);
                slots.lock().expect("no worker panicked")[k] = Some(r);
            });
        }
    });
    slots
        .into_inner()
        .expect("no worker panicked")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_map_keeps_order() {
        let items: Vec<u64> = (0..37).collect();
        let seq = parallel_map(&items, 1, |x| x * x);
        let par = parallel_map(&items, 4, |x| x * x);
        assert_eq!(seq, par);
        assert_eq!(par[36], 36 * 36);
        assert!(parallel_map(&Vec::<u64>::new(), 3, |x| *x).is_empty());
    }
}
