//! Order-preserving fan-out over scoped threads.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

/// Applies `f` to every item with up to `workers` threads. Results come back
/// in input order. After the first error remaining items are skipped and the
/// error with the lowest index among those observed is returned.
pub(crate) fn try_map_ordered<T, R, E, F>(items: &[T], workers: usize, f: F) -> Result<Vec<R>, (usize, E)>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(usize, &T) -> Result<R, E> + Sync,
{
    let workers = workers.max(1).min(items.len().max(1));
    if workers == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t).map_err(|e| (i, e))).collect();
    }
    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    let errors: Mutex<Vec<(usize, E)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if failed.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                match f(i, &items[i]) {
                    Ok(r) => slots.lock().expect("result lock")[i] = Some(r),
                    Err(e) => {
                        failed.store(true, Ordering::Relaxed);
                        errors.lock().expect("error lock").push((i, e));
                    }
                }
            });
        }
    });
    let mut errors = errors.into_inner().expect("error lock");
    if !errors.is_empty() {
        errors.sort_by_key(|e| e.0);
        return Err(errors.swap_remove(0));
    }
    Ok(slots.into_inner().expect("result lock").into_iter().map(|r| r.expect("every slot filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_order() {
        let items: Vec<usize> = (0..200).collect();
        let out = try_map_ordered(&items, 8, |_, x| Ok::<_, ()>(x * 2)).unwrap();
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn reports_error() {
        let items: Vec<usize> = (0..50).collect();
        let err = try_map_ordered(&items, 1, |_, &x| if x == 7 { Err("seven") } else { Ok(x) }).unwrap_err();
        assert_eq!(err, (7, "seven"));
        assert!(try_map_ordered(&items, 4, |_, &x| if x == 7 { Err("seven") } else { Ok(x) }).is_err());
    }

    #[test]
    fn empty_input() {
        let out = try_map_ordered(&[] as &[u8], 4, |_, x| Ok::<_, ()>(*x)).unwrap();
        assert!(out.is_empty());
    }
}
