use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

/// Applies `f` to every item on at most `max_parallel` threads and returns
/// results in input order. Once `abort` is set, remaining items get `None`.
pub(crate) fn fan_out<T, R, F>(items: &[T], max_parallel: usize, abort: &AtomicBool, f: F) -> Vec<Option<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = max_parallel.max(1).min(items.len().max(1));
    if workers == 1 {
        return items
            .iter()
            .map(|it| (!abort.load(Ordering::Relaxed)).then(|| f(it)))
            .collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() || abort.load(Ordering::Relaxed) {
                    break;
                }
                let r = f(&items[i]);
                slots.lock().expect("result slots poisoned")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("result slots poisoned")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preserves_order() {
        let items: Vec<u32> = (0..100).collect();
        let abort = AtomicBool::new(false);
        let out = fan_out(&items, 8, &abort, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| Some(x * 2)).collect::<Vec<_>>());
    }

    #[test]
    fn bounded_concurrency() {
        let live = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        let items = vec![(); 40];
        let abort = AtomicBool::new(false);
        fan_out(&items, 3, &abort, |_| {
            let now = live.fetch_add(1, Ordering::SeqCst) + 1;
            peak.fetch_max(now, Ordering::SeqCst);
            thread::sleep(std::time::Duration::from_millis(2));
            live.fetch_sub(1, Ordering::SeqCst);
        });
        assert!(peak.load(Ordering::SeqCst) <= 3);
    }

    #[test]
    fn abort_stops_new_work() {
        let items: Vec<u32> = (0..50).collect();
        let abort = AtomicBool::new(false);
        let out = fan_out(&items, 1, &abort, |&x| {
            if x == 4 {
                abort.store(true, Ordering::Relaxed);
            }
            x
        });
        assert_eq!(out.iter().flatten().count(), 5);
    }
}
