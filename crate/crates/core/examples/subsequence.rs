//! Retrieve task instances from an interaction log: slide a template over the
//! event series, drop overlapping windows, and score against the planted truth.

use simsearch::subsequence::{
    evaluate_retrieval, retrieve_task_instances, RetrievalMode, RetrievalParams,
};
use simsearch::synth::{self, LogSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let generated = synth::planted_log(&LogSpec::separated(3, 24), 1);
    let log = &generated.log;
    println!(
        "log of {} events, {} planted instances",
        log.series.len(),
        log.instances.len()
    );

    let first = &log.instances[0];
    let template = log.window(first);
    let truth = log.ground_truth(first.task);
    for mode in [RetrievalMode::Classic, RetrievalMode::Local] {
        let kept = retrieve_task_instances(
            &log.series,
            &template,
            &RetrievalParams::new(mode, truth.len()).lambda(0.9),
        )?;
        let ev = evaluate_retrieval(&kept, &truth);
        println!(
            "{mode:?}: {} windows, precision {:.3} recall {:.3} f1 {:.3}",
            kept.len(),
            ev.precision,
            ev.recall,
            ev.f1
        );
    }

    let skewed = synth::planted_log(&LogSpec::skewed(24), 1);
    let query = skewed.template(0, &[2.5, 0.0]);
    let truth = skewed.log.ground_truth(0);
    for mode in [RetrievalMode::Classic, RetrievalMode::Local] {
        let kept = retrieve_task_instances(
            &skewed.log.series,
            &query,
            &RetrievalParams::new(mode, truth.len()).lambda(0.9),
        )?;
        println!(
            "skewed {mode:?}: f1 {:.3}",
            evaluate_retrieval(&kept, &truth).f1
        );
    }
    Ok(())
}
