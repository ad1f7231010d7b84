mod common;

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use common::Fixture;
use partape::logic::{SyncKind, TraceRecord};
use partape::tape::{current_tape, EntryView};
use partape::{AccessMode, Active64, AdTool, MutexKind, Schedule};
use proptest::prelude::*;

/// Pushes a logging reverse action onto the calling thread's tape.
fn push_log<T: Send + Sync + Clone + 'static>(log: &Arc<Mutex<Vec<T>>>, item: T) {
    let log = Arc::clone(log);
    current_tape::<f64>()
        .expect("recording thread")
        .push_external_function(move |_, _| log.lock().unwrap().push(item.clone()));
}

fn count_externals(entries: &[EntryView<f64>]) -> usize {
    entries
        .iter()
        .filter(|e| matches!(e, EntryView::External))
        .count()
}

#[test]
fn squares_on_four_threads() {
    let fx = Fixture::new();
    let xs: Vec<Active64> = (1..=4).map(|k| fx.input(k as f64)).collect();
    let ys = Mutex::new(vec![Active64::passive(0.0); 4]);
    fx.rt
        .parallel(4, |team| {
            let i = team.index();
            ys.lock().unwrap()[i] = xs[i] * xs[i];
        })
        .unwrap();
    for y in ys.into_inner().unwrap() {
        fx.seed(y, 1.0);
    }
    fx.reverse();
    let grads: Vec<f64> = xs.iter().map(|&x| fx.adjoint(x)).collect();
    assert_eq!(grads, vec![2.0, 4.0, 6.0, 8.0]);
}

#[test]
fn doubling_with_distinct_seeds() {
    let fx = Fixture::new();
    let xs = [fx.input(1.0), fx.input(-1.0)];
    let ys = Mutex::new(vec![Active64::passive(0.0); 2]);
    fx.rt
        .parallel(2, |team| {
            let i = team.index();
            ys.lock().unwrap()[i] = xs[i] * 2.0;
        })
        .unwrap();
    let ys = ys.into_inner().unwrap();
    fx.seed(ys[0], 3.0);
    fx.seed(ys[1], 5.0);
    fx.reverse();
    assert_eq!(fx.adjoint(xs[0]), 6.0);
    assert_eq!(fx.adjoint(xs[1]), 10.0);
}

#[test]
fn idle_members_record_nothing() {
    let fx = Fixture::new();
    let x = fx.input(2.0);
    let y = Mutex::new(Active64::passive(0.0));
    fx.rt
        .parallel(3, |team| {
            team.master(|| *y.lock().unwrap() = x.exp());
        })
        .unwrap();
    fx.seed(y.into_inner().unwrap(), 1.0);
    fx.reverse();
    assert!((fx.adjoint(x) - 2f64.exp()).abs() < 1e-15);
}

fn events(fx: &Fixture) -> Vec<TraceRecord> {
    fx.trace_events()
}

#[test]
fn event_order_contract() {
    let fx = Fixture::traced();
    fx.rt.parallel(3, |team| team.barrier()).unwrap();
    let ev = events(&fx);
    let pos = |pred: &dyn Fn(&TraceRecord) -> bool| ev.iter().position(pred).unwrap();
    let begin = pos(&|e| e.event == "ParallelBegin");
    let first_task = pos(&|e| e.event == "ImplicitTaskBegin");
    let end = pos(&|e| e.event == "ParallelEnd");
    let master_end = ev
        .iter()
        .position(|e| e.event == "ImplicitTaskEnd" && e.value == "0")
        .unwrap();
    assert!(begin < first_task);
    assert!(master_end < end);
    let count = |name: &str| ev.iter().filter(|e| e.event == name).count();
    assert_eq!(count("ImplicitTaskBegin"), 3);
    assert_eq!(count("ImplicitTaskEnd"), 3);
    // explicit barrier plus the implicit one at the region end
    assert_eq!(count("SyncRegionBegin"), 6);
    assert_eq!(count("SyncRegionEnd"), 6);
}

#[test]
fn single_member_team_pairs_events() {
    let fx = Fixture::traced();
    let x = fx.input(3.0);
    let y = Mutex::new(Active64::passive(0.0));
    fx.rt.parallel(1, |_| *y.lock().unwrap() = x * x).unwrap();
    let ev = events(&fx);
    let names: Vec<&str> = ev.iter().map(|e| e.event.as_str()).collect();
    assert_eq!(
        names,
        vec![
            "ParallelBegin",
            "ImplicitTaskBegin",
            "SyncRegionBegin",
            "SyncRegionEnd",
            "ImplicitTaskEnd",
            "ParallelEnd"
        ]
    );
    fx.seed(y.into_inner().unwrap(), 1.0);
    fx.reverse();
    assert_eq!(fx.adjoint(x), 6.0);
}

#[test]
fn nested_regions_build_the_nesting_tree() {
    let fx = Fixture::traced();
    let x = fx.input(1.5);
    let leaves = Mutex::new(HashMap::new());
    fx.rt
        .parallel(2, |outer| {
            let o = outer.index();
            let a = x * (o as f64 + 1.0);
            outer
                .runtime()
                .parallel(2, |inner| {
                    let y = a * a * (inner.index() as f64 + 1.0);
                    let tape = current_tape::<f64>().unwrap().id();
                    leaves.lock().unwrap().insert((o, inner.index()), (y, tape));
                })
                .unwrap();
        })
        .unwrap();
    let leaves = leaves.into_inner().unwrap();
    let tapes: BTreeSet<_> = leaves.values().map(|(_, t)| *t).collect();
    assert_eq!(tapes.len(), 4);
    for (y, _) in leaves.values() {
        fx.seed(*y, 1.0);
    }
    fx.reverse();
    // sum over o, i of (o+1)^2 (i+1) x^2  ->  d/dx = 2x * 5 * 3
    assert!((fx.adjoint(x) - 2.0 * 1.5 * 15.0).abs() < 1e-12);

    let threads: BTreeSet<String> = events(&fx)
        .into_iter()
        .filter(|e| e.event == "ImplicitTaskEnd")
        .map(|e| e.thread)
        .collect();
    let expected: BTreeSet<String> = ["0", "1", "0/0", "0/1", "1/0", "1/1"]
        .into_iter()
        .map(String::from)
        .collect();
    assert_eq!(threads, expected);
    assert_eq!(fx.logic.diagnostics().pool_conflicts, 0);
}

#[test]
fn sequential_regions_reuse_tapes() {
    let fx = Fixture::new();
    let tapes = Mutex::new(Vec::new());
    for _ in 0..2 {
        fx.rt
            .parallel(2, |team| {
                if team.index() == 0 {
                    tapes
                        .lock()
                        .unwrap()
                        .push(current_tape::<f64>().unwrap().id());
                }
            })
            .unwrap();
    }
    let tapes = tapes.into_inner().unwrap();
    assert_eq!(tapes[0], tapes[1]);
    assert_eq!(fx.logic.pooled_tapes().len(), 2);
}

#[test]
fn second_region_appends_after_the_first() {
    let fx = Fixture::new();
    let x = fx.input(2.0);
    let ys = Mutex::new(Vec::new());
    for k in 0..2 {
        fx.rt
            .parallel(2, |team| {
                let y = x * (team.index() + 2 * k + 1) as f64;
                ys.lock().unwrap().push(y);
            })
            .unwrap();
    }
    for y in ys.into_inner().unwrap() {
        fx.seed(y, 1.0);
    }
    fx.reverse();
    assert_eq!(fx.adjoint(x), 1.0 + 2.0 + 3.0 + 4.0);
}

#[test]
fn passive_master_makes_regions_inert() {
    let fx = Fixture::new();
    fx.tape.set_active(false);
    let x = fx.input(2.0);
    let hits = AtomicUsize::new(0);
    fx.rt
        .parallel(2, |team| {
            let y = x * x;
            assert!(!y.is_active());
            team.barrier();
            hits.fetch_add(1, Ordering::Relaxed);
        })
        .unwrap();
    assert_eq!(hits.into_inner(), 2);
    assert!(fx.tape.is_empty());
    assert!(fx.logic.pooled_tapes().is_empty());
}

#[test]
fn passive_barrier_leaves_no_reverse_barrier() {
    let fx = Fixture::new();
    let entries = Mutex::new(Vec::new());
    fx.rt
        .parallel(2, |team| {
            let tape = current_tape::<f64>().unwrap();
            let before = tape.entries().len();
            fx.tool.set_active(&tape, false);
            team.barrier();
            fx.tool.set_active(&tape, true);
            let after = tape.entries();
            entries
                .lock()
                .unwrap()
                .push(count_externals(&after[before..]));
        })
        .unwrap();
    assert_eq!(entries.into_inner().unwrap(), vec![0, 0]);
}

#[test]
fn worksharing_barriers_and_nowait() {
    let fx = Fixture::new();
    let counts = Mutex::new(Vec::new());
    fx.rt
        .parallel(2, |team| {
            let tape = current_tape::<f64>().unwrap();
            team.for_loop(0..8, Schedule::Static(0), true, |_| {});
            let after_nowait = count_externals(&tape.entries());
            team.for_loop(0..8, Schedule::Dynamic(1), false, |_| {});
            let after_loop = count_externals(&tape.entries());
            team.single(false, || {});
            let after_single = count_externals(&tape.entries());
            team.master(|| {});
            let after_master = count_externals(&tape.entries());
            counts
                .lock()
                .unwrap()
                .push((after_nowait, after_loop, after_single, after_master));
        })
        .unwrap();
    for c in counts.into_inner().unwrap() {
        assert_eq!(c, (0, 1, 2, 2));
    }
}

#[test]
fn single_in_team_of_four_records_four_barrier_pairs() {
    let fx = Fixture::traced();
    fx.rt
        .parallel(4, |team| {
            team.single(false, || {});
        })
        .unwrap();
    let ev = events(&fx);
    let implicit = |name: &str| {
        ev.iter()
            .filter(|e| e.event == name && e.key == "implicit")
            .count()
    };
    // single barrier plus region end barrier, per member
    assert_eq!(implicit("SyncRegionBegin"), 8);
    assert_eq!(implicit("SyncRegionEnd"), 8);
    let work: Vec<_> = ev.iter().filter(|e| e.event.starts_with("Work")).collect();
    assert_eq!(work.len(), 8);
    assert!(work.iter().all(|e| e.key == "single"));
}

#[test]
fn barrier_separates_reverse_phases() {
    for _ in 0..50 {
        let fx = Fixture::new();
        let in_b = Arc::new(AtomicUsize::new(0));
        let violations = Arc::new(AtomicUsize::new(0));
        fx.rt
            .parallel(4, |team| {
                let tape = current_tape::<f64>().unwrap();
                let (b, v) = (Arc::clone(&in_b), Arc::clone(&violations));
                // reversed A: nobody may still be inside reversed B
                tape.push_external_function(move |_, _| {
                    if b.load(Ordering::SeqCst) != 0 {
                        v.fetch_add(1, Ordering::SeqCst);
                    }
                });
                team.barrier();
                let b = Arc::clone(&in_b);
                tape.push_external_function(move |_, _| {
                    b.fetch_sub(1, Ordering::SeqCst);
                });
                let b = Arc::clone(&in_b);
                let index = team.index();
                tape.push_external_function(move |_, _| {
                    b.fetch_add(1, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_micros(50 * index as u64));
                });
            })
            .unwrap();
        fx.reverse();
        assert_eq!(violations.load(Ordering::SeqCst), 0);
    }
}

#[test]
fn critical_sections_reverse_in_inverted_order() {
    let fx = Fixture::new();
    let forward = Arc::new(Mutex::new(Vec::new()));
    let reverse = Arc::new(Mutex::new(Vec::new()));
    fx.rt
        .parallel(4, |team| {
            for k in 0..50 {
                fx.rt.critical(None, || {
                    forward.lock().unwrap().push((team.index(), k));
                    push_log(&reverse, (team.index(), k));
                });
            }
        })
        .unwrap();
    fx.reverse();
    let mut expected = forward.lock().unwrap().clone();
    assert_eq!(expected.len(), 200);
    expected.reverse();
    assert_eq!(*reverse.lock().unwrap(), expected);
    let key = fx.rt.critical_key(None);
    assert_eq!(fx.logic.mutex_counter(key), 0);
}

#[test]
fn two_threads_one_acquisition_each() {
    for first in 0..2 {
        let fx = Fixture::new();
        let forward = Arc::new(Mutex::new(Vec::new()));
        let reverse = Arc::new(Mutex::new(Vec::new()));
        let lock = fx.rt.lock_init();
        fx.rt
            .parallel(2, |team| {
                if team.index() != first {
                    std::thread::sleep(Duration::from_millis(20));
                }
                fx.rt.lock_set(&lock);
                forward.lock().unwrap().push(team.index());
                push_log(&reverse, team.index());
                fx.rt.lock_unset(&lock).unwrap();
            })
            .unwrap();
        fx.reverse();
        let mut expected = forward.lock().unwrap().clone();
        assert_eq!(expected[0], first);
        expected.reverse();
        assert_eq!(*reverse.lock().unwrap(), expected);
    }
}

#[test]
fn nested_lock_set_three_times_unwinds() {
    let fx = Fixture::traced();
    let lock = fx.rt.nested_lock_init();
    let x = fx.input(2.0);
    let ys = Mutex::new(Vec::new());
    fx.rt
        .parallel(3, |team| {
            for _ in 0..3 {
                fx.rt.nested_lock_set(&lock);
            }
            ys.lock().unwrap().push(x * (team.index() + 1) as f64);
            for _ in 0..3 {
                fx.rt.nested_lock_unset(&lock).unwrap();
            }
        })
        .unwrap();
    assert_eq!(fx.logic.mutex_counter(lock.key()), 9);
    let acquired: Vec<u64> = events(&fx)
        .iter()
        .filter(|e| e.event == "MutexAcquired")
        .map(|e| e.value.parse().unwrap())
        .collect();
    assert_eq!(acquired, (1..=9).collect::<Vec<_>>());
    for y in ys.into_inner().unwrap() {
        fx.seed(y, 1.0);
    }
    fx.reverse();
    assert_eq!(fx.adjoint(x), 6.0);
    assert_eq!(fx.logic.mutex_counter(lock.key()), 0);
}

#[test]
fn ordered_sections_reverse_backwards() {
    let fx = Fixture::new();
    let forward = Arc::new(Mutex::new(Vec::new()));
    let reverse = Arc::new(Mutex::new(Vec::new()));
    fx.rt
        .parallel(2, |team| {
            team.for_ordered(0..4, Schedule::Dynamic(1), false, |i| {
                team.ordered(i, || {
                    forward.lock().unwrap().push(i);
                    push_log(&reverse, i);
                })
                .unwrap();
            });
        })
        .unwrap();
    fx.reverse();
    assert_eq!(*forward.lock().unwrap(), vec![0, 1, 2, 3]);
    assert_eq!(*reverse.lock().unwrap(), vec![3, 2, 1, 0]);
}

#[test]
fn ordered_with_recording_disabled() {
    let fx = Fixture::new();
    fx.tape.set_active(false);
    let order = Mutex::new(Vec::new());
    fx.rt
        .parallel(2, |team| {
            team.for_ordered(0..6, Schedule::Static(1), false, |i| {
                team.ordered(i, || order.lock().unwrap().push(i)).unwrap();
            });
        })
        .unwrap();
    assert_eq!(order.into_inner().unwrap(), (0..6).collect::<Vec<_>>());
    assert!(fx.tape.is_empty());
}

#[test]
fn sum_reduction_distributes_seed() {
    let fx = Fixture::traced();
    let xs: Vec<Active64> = (0..4).map(|k| fx.input(k as f64 + 0.5)).collect();
    let sum = fx
        .rt
        .declare_reduction(Active64::passive(0.0), |a, b| a + b);
    let total = std::sync::Mutex::new(sum.identity());
    fx.rt
        .parallel(4, |team| {
            let private = xs[team.index()] * 1.0;
            team.reduce(&sum, private, &total);
        })
        .unwrap();
    let j = total.into_inner().unwrap();
    assert_eq!(j.value(), 0.5 + 1.5 + 2.5 + 3.5);
    fx.seed(j, 1.0);
    fx.reverse();
    for x in &xs {
        assert_eq!(fx.adjoint(*x), 1.0);
    }
    let key = sum.key().to_string();
    let acquired = events(&fx)
        .iter()
        .filter(|e| e.event == "MutexAcquired" && e.key == key)
        .count();
    assert_eq!(acquired, 12);
    assert_eq!(sum.key().kind, MutexKind::Reduction);
}

#[test]
fn product_reduction() {
    let fx = Fixture::new();
    let xs = [fx.input(2.0), fx.input(3.0)];
    let prod = fx
        .rt
        .declare_reduction(Active64::passive(1.0), |a, b| a * b);
    let total = std::sync::Mutex::new(prod.identity());
    fx.rt
        .parallel(2, |team| team.reduce(&prod, xs[team.index()], &total))
        .unwrap();
    let j = total.into_inner().unwrap();
    assert_eq!(j.value(), 6.0);
    fx.seed(j, 1.0);
    fx.reverse();
    assert_eq!(fx.adjoint(xs[0]), 3.0);
    assert_eq!(fx.adjoint(xs[1]), 2.0);
}

#[test]
fn classical_mode_inside_region() {
    let fx = Fixture::new();
    let x = fx.input(1.0);
    let ys = Mutex::new(Vec::new());
    fx.rt
        .parallel(2, |team| {
            fx.logic.set_adjoint_access_mode(AccessMode::Classical);
            assert_eq!(fx.logic.get_adjoint_access_mode(), AccessMode::Classical);
            let a = Active64::passive(team.index() as f64 + 1.0);
            let own = fx.tape.engine().register_input(0.0) + a;
            ys.lock().unwrap().push(own * 2.0);
        })
        .unwrap();
    // the change stayed inside the tasks
    assert_eq!(fx.logic.get_adjoint_access_mode(), AccessMode::Atomic);
    for y in ys.into_inner().unwrap() {
        fx.seed(y, 1.0);
    }
    let before = fx.engine().stats();
    fx.reverse();
    let after = fx.engine().stats();
    assert_eq!(after.classical_statements - before.classical_statements, 4);
    assert_eq!(after.atomic_statements, before.atomic_statements);
    let _ = x;
}

#[test]
fn reverse_barrier_separates_mode_phases() {
    // Each thread first works exclusively on its own data (classical), then
    // reads shared data (atomic). In reverse, the atomic phase runs first;
    // a thread entering its classical phase while another is still in the
    // atomic phase would mix safe and unsafe writes.
    for _ in 0..20 {
        let fx = Fixture::new();
        let in_atomic = Arc::new(AtomicUsize::new(0));
        let mixed = Arc::new(AtomicUsize::new(0));
        fx.rt
            .parallel(2, |team| {
                let tape = current_tape::<f64>().unwrap();
                fx.logic.set_adjoint_access_mode(AccessMode::Classical);
                let (a, m) = (Arc::clone(&in_atomic), Arc::clone(&mixed));
                tape.push_external_function(move |_, mode| {
                    assert_eq!(mode, AccessMode::Classical);
                    if a.load(Ordering::SeqCst) != 0 {
                        m.fetch_add(1, Ordering::SeqCst);
                    }
                });
                fx.logic.add_reverse_barrier();
                fx.logic.set_adjoint_access_mode(AccessMode::Atomic);
                let a = Arc::clone(&in_atomic);
                tape.push_external_function(move |_, _| {
                    a.fetch_sub(1, Ordering::SeqCst);
                });
                let a = Arc::clone(&in_atomic);
                let slow = team.index() == 1;
                tape.push_external_function(move |_, mode| {
                    assert_eq!(mode, AccessMode::Atomic);
                    a.fetch_add(1, Ordering::SeqCst);
                    if slow {
                        std::thread::sleep(Duration::from_millis(30));
                    }
                });
            })
            .unwrap();
        fx.reverse();
        assert_eq!(mixed.load(Ordering::SeqCst), 0);
    }
}

#[test]
fn reverse_flush_runs_once_per_thread() {
    let fx = Fixture::new();
    fx.rt.parallel(3, |_| fx.logic.add_reverse_flush()).unwrap();
    let before = fx.engine().stats().external_calls;
    fx.reverse();
    let calls = fx.engine().stats().external_calls - before;
    // one region action, three flushes, three end barriers
    assert_eq!(calls, 7);
}

#[test]
fn delayed_task_end_is_awaited() {
    let fx = Fixture::new();
    let x = fx.input(2.0);
    let pd = fx.logic.on_parallel_begin(2).unwrap();
    let y1 = Mutex::new(None);
    std::thread::scope(|s| {
        let td = fx.logic.on_implicit_task_begin(2, 0, &pd).unwrap();
        let y0 = x * 3.0;
        fx.logic.on_implicit_task_end(td).unwrap();
        let pd1 = pd.clone();
        let worker = s.spawn(|| {
            let pd1 = pd1;
            let td = fx.logic.on_implicit_task_begin(2, 1, &pd1).unwrap();
            *y1.lock().unwrap() = Some(x * 5.0);
            std::thread::sleep(Duration::from_millis(30));
            fx.logic.on_implicit_task_end(td).unwrap();
        });
        fx.logic.on_parallel_end(pd.clone());
        fx.seed(y0, 1.0);
        worker.join().unwrap();
    });
    fx.seed(y1.into_inner().unwrap().unwrap(), 1.0);
    fx.reverse();
    assert_eq!(fx.adjoint(x), 8.0);
}

#[test]
fn task_end_on_wrong_thread_is_rejected() {
    let fx = Fixture::new();
    let pd = fx.logic.on_parallel_begin(1).unwrap();
    let td = fx.logic.on_implicit_task_begin(1, 0, &pd).unwrap();
    let result = std::thread::scope(|s| {
        s.spawn(|| fx.logic.on_implicit_task_end(td))
            .join()
            .unwrap()
    });
    assert_eq!(result, Err(partape::logic::LogicError::ThreadMismatch));
}

#[test]
fn bad_task_index_is_rejected() {
    let fx = Fixture::new();
    let pd = fx.logic.on_parallel_begin(2).unwrap();
    assert!(fx.logic.on_implicit_task_begin(2, 2, &pd).is_err());
    assert!(fx.logic.on_implicit_task_begin(3, 0, &pd).is_err());
}

#[test]
fn sync_events_outside_region_are_ignored() {
    let fx = Fixture::new();
    fx.logic.on_sync_region_begin(SyncKind::Barrier);
    fx.logic.on_sync_region_end(SyncKind::Barrier);
    assert!(fx.tape.is_empty());
    assert_eq!(fx.logic.diagnostics().ignored_events, 1);
}

#[test]
fn export_recover_positional_evaluation() {
    let run = |extra: bool| -> f64 {
        let fx = Fixture::new();
        let x = fx.input(1.25);
        let sum = Mutex::new(Active64::passive(0.0));
        let start = fx.tape.position();
        fx.rt
            .parallel(3, |team| {
                for k in 0..5 {
                    fx.rt.critical(None, || {
                        let mut s = sum.lock().unwrap();
                        *s += x * (team.index() * 5 + k) as f64;
                    });
                }
            })
            .unwrap();
        let j = *sum.lock().unwrap();
        let end = fx.tape.position();
        let state = fx.logic.export_state();
        if extra {
            let other = Mutex::new(Active64::passive(0.0));
            fx.rt
                .parallel(2, |_| {
                    for _ in 0..7 {
                        fx.rt.critical(None, || {
                            let mut o = other.lock().unwrap();
                            *o += x * x;
                        });
                    }
                })
                .unwrap();
        }
        fx.logic.recover_state(&state);
        fx.tape.set_active(false);
        fx.seed(j, 1.0);
        fx.tape.evaluate(end, start, AccessMode::Atomic).unwrap();
        fx.adjoint(x)
    };
    let plain = run(false);
    assert_eq!(plain, (0..15).sum::<usize>() as f64);
    assert_eq!(run(true), plain);
}

#[test]
fn state_round_trip_is_a_no_op() {
    let fx = Fixture::new();
    fx.rt
        .parallel(2, |_| fx.rt.critical(Some("a"), || {}))
        .unwrap();
    let state = fx.logic.export_state();
    assert_eq!(
        state.counters.values().copied().collect::<Vec<_>>(),
        vec![2]
    );
    fx.logic.recover_state(&fx.logic.export_state());
    assert_eq!(fx.logic.export_state(), state);
}

#[test]
fn region_panic_discards_task_recordings() {
    let fx = Fixture::new();
    let x = fx.input(1.0);
    let result = fx.rt.parallel(2, |team| {
        let _ = x * 2.0;
        if team.index() == 1 {
            panic!("member failure");
        }
    });
    assert!(result.is_err());
    assert!(fx.tape.is_empty());
    assert!(fx
        .logic
        .pooled_tapes()
        .iter()
        .all(|(_, _)| fx.logic.live_task_tapes().is_empty()));
}

#[test]
fn master_reset_rewinds_task_tapes() {
    let fx = Fixture::new();
    let x = fx.input(1.0);
    let record = || {
        fx.rt
            .parallel(2, |_| {
                let _ = (x * 2.0).sin();
            })
            .unwrap();
    };
    record();
    let pooled = fx.logic.pooled_tapes();
    assert_eq!(pooled.len(), 2);
    fx.tape.reset(false);
    record();
    record();
    fx.tape.reset(false);
    // the pool tapes hold nothing once no region refers to them
    fx.tape.set_active(true);
    let lens = Mutex::new(Vec::new());
    fx.rt
        .parallel(2, |_| {
            lens.lock()
                .unwrap()
                .push(current_tape::<f64>().unwrap().len())
        })
        .unwrap();
    assert_eq!(lens.into_inner().unwrap(), vec![0, 0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Every iteration runs exactly once for all schedules.
    #[test]
    fn worksharing_completeness(
        n in 0usize..200,
        team in 1usize..6,
        chunk in 0usize..9,
        dynamic in any::<bool>(),
    ) {
        let fx = Fixture::new();
        fx.tape.set_active(false);
        let hits: Vec<AtomicUsize> = (0..n).map(|_| AtomicUsize::new(0)).collect();
        let schedule = if dynamic { Schedule::Dynamic(chunk) } else { Schedule::Static(chunk) };
        fx.rt.parallel(team, |t| {
            t.for_loop(0..n, schedule, false, |i| {
                hits[i].fetch_add(1, Ordering::Relaxed);
            });
        }).unwrap();
        prop_assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
    }

    /// Gradients through regions, criticals and reductions match a serial
    /// recording of the same computation.
    #[test]
    fn equivalent_serial_law(
        values in prop::collection::vec(0.2f64..2.0, 8),
        team in 1usize..5,
    ) {
        let parallel = {
            let fx = Fixture::new();
            let xs: Vec<Active64> = values.iter().map(|&v| fx.input(v)).collect();
            let acc = Mutex::new(Active64::passive(0.0));
            let sum = fx.rt.declare_reduction(Active64::passive(0.0), |a, b| a + b);
            let red = std::sync::Mutex::new(sum.identity());
            fx.rt.parallel(team, |t| {
                let mut private = Active64::passive(0.0);
                t.for_loop(0..8, Schedule::Dynamic(1), false, |i| {
                    let s = xs[i].sin() * xs[(i + 1) % 8];
                    fx.rt.critical(None, || {
                        let mut a = acc.lock().unwrap();
                        *a += s;
                    });
                    private += xs[i] * xs[i];
                });
                t.reduce(&sum, private, &red);
            }).unwrap();
            let j = *acc.lock().unwrap() + red.into_inner().unwrap();
            fx.seed(j, 1.0);
            fx.reverse();
            xs.iter().map(|&x| fx.adjoint(x)).collect::<Vec<_>>()
        };
        let serial = {
            let fx = Fixture::new();
            let xs: Vec<Active64> = values.iter().map(|&v| fx.input(v)).collect();
            let mut j = Active64::passive(0.0);
            for i in 0..8 {
                j = j + xs[i].sin() * xs[(i + 1) % 8] + xs[i] * xs[i];
            }
            fx.seed(j, 1.0);
            fx.reverse();
            xs.iter().map(|&x| fx.adjoint(x)).collect::<Vec<_>>()
        };
        for (p, s) in parallel.iter().zip(&serial) {
            prop_assert!((p - s).abs() <= 1e-12 * s.abs().max(1.0), "{p} vs {s}");
        }
    }
}
