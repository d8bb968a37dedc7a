//! Transition dataset from a noised expert at several noise levels, with
//! record counts per level and split.
//!
//!     cargo run --release --example transitions

use std::collections::BTreeMap;

use interlock::datagen::{collect_transitions, Split, TransitionConfig};

fn main() {
    let cfg = TransitionConfig {
        boards: 20,
        episodes_per_level: 4,
        eval_records: 200,
        ..TransitionConfig::default()
    };
    let d = collect_transitions(&cfg, 4).unwrap();
    let mut per_level: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for r in &d.records {
        let e = per_level.entry(format!("{:.1}", r.p_rand)).or_default();
        e.0 += 1;
        if r.split == Split::Eval {
            e.1 += 1;
        }
    }
    println!("{:<8}{:>10}{:>8}", "p_rand", "records", "eval");
    for (p, (n, eval)) in per_level {
        println!("{p:<8}{n:>10}{eval:>8}");
    }
    let longest = d.episode_lengths.iter().max().unwrap();
    println!(
        "{} episodes, longest {longest} steps, {} observations stored",
        d.episode_lengths.len(),
        d.store.len()
    );
}
