//! Interactive data collection: expert demonstrations plus two rounds of
//! mixed learner/expert rollouts, relabeled into proposal and reflection
//! examples and written to disk.
//!
//!     cargo run --release --example collect_data -- [OUT_DIR]

use std::path::PathBuf;
use std::sync::Arc;

use interlock::datagen::{collect, CollectionConfig, Dataset, DatagenError, ExampleKind, TrainingHook};
use interlock::policy::{Policy, ScriptedLearner};
use interlock::taskgen::generate_task;
use interlock::{GenParams, TaskInstance};

/// Stands in for a trainer: reports what it would finetune on.
struct Report;

impl TrainingHook for Report {
    fn on_iteration(&mut self, i: usize, added: &Dataset, total: &Dataset) -> Result<(), DatagenError> {
        let learner_steps: usize = added
            .episodes
            .iter()
            .map(|e| e.learner_executed.iter().filter(|&&x| x).count())
            .sum();
        println!(
            "iteration {i}: +{} examples ({} learner actions executed), dataset now {}",
            added.len(),
            learner_steps,
            total.len()
        );
        Ok(())
    }
}

fn main() {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("interlock-collect"));
    let tasks: Vec<Arc<TaskInstance>> = (0..20)
        .map(|s| Arc::new(generate_task(&GenParams::default(), s, s).unwrap()))
        .collect();
    let cfg = CollectionConfig {
        iterations: 2,
        per_iter: 20,
        demonstrations: 20,
        ..CollectionConfig::default()
    };
    let learner = |_: &Arc<TaskInstance>| Box::new(ScriptedLearner::new()) as Box<dyn Policy>;
    let c = collect(&tasks, &learner, &cfg, 4, &mut Report).unwrap();
    c.dataset.write(&out).unwrap();

    let example = c
        .dataset
        .examples
        .iter()
        .find(|e| e.kind == ExampleKind::Reflection && e.iteration > 0)
        .unwrap();
    println!("sizes after each round: {:?}", c.sizes);
    println!("{} distinct observations stored", c.dataset.store.len());
    println!("a reflection example (label {}):\n{}", example.label, example.prompt);
    println!("written to {}", out.display());
}
