//! Statistical properties that need a few hundred seeded runs.

use simsearch::global::{
    build_coreset, rank_by_hyperplane, train_separator, train_separator_on, CoresetMethod,
    CoresetSpec, SvmParams,
};
use simsearch::subsequence::{
    evaluate_retrieval, retrieve_task_instances, RetrievalMode, RetrievalParams,
};
use simsearch::synth::{correlated_cloud, planted_log, LogSpec};
use simsearch::Embedding;

#[test]
fn separated_motifs_are_recovered_exactly() {
    for seed in 0..5 {
        let g = planted_log(&LogSpec::separated(3, 24), seed);
        for (idx, inst) in g.log.instances.iter().enumerate().step_by(7) {
            let gt = g.log.ground_truth(inst.task);
            let params = RetrievalParams::new(RetrievalMode::Classic, gt.len());
            let kept =
                retrieve_task_instances(&g.log.series, &g.log.window(inst), &params).unwrap();
            let ev = evaluate_retrieval(&kept, &gt);
            assert_eq!(ev.f1, 1.0, "seed {seed} instance {idx}");
        }
    }
}

#[test]
fn local_retrieval_helps_on_skewed_tasks() {
    let (mut classic, mut local) = (0.0, 0.0);
    let seeds = 100;
    for seed in 0..seeds {
        let g = planted_log(&LogSpec::skewed(24), seed);
        let template = g.template(0, &[2.5, 0.0]);
        let gt = g.log.ground_truth(0);
        let run = |mode, lambda| {
            let params = RetrievalParams::new(mode, gt.len()).lambda(lambda);
            evaluate_retrieval(
                &retrieve_task_instances(&g.log.series, &template, &params).unwrap(),
                &gt,
            )
            .f1
        };
        classic += run(RetrievalMode::Classic, 0.0);
        local += run(RetrievalMode::Local, 0.9);
    }
    let (classic, local) = (classic / seeds as f64, local / seeds as f64);
    eprintln!("skewed tasks: classic f1 {classic:.4}, local f1 {local:.4}");
    assert!(local >= classic, "local {local} < classic {classic}");
}

fn jaccard(a: &[u64], b: &[u64]) -> f64 {
    let inter = a.iter().filter(|x| b.contains(x)).count();
    inter as f64 / (a.len() + b.len() - inter) as f64
}

#[test]
fn coreset_training_tracks_the_full_store() {
    let query = Embedding::new(vec![2.5, 2.5]).unwrap();
    let seeds = 20;
    for method in [CoresetMethod::KCenterGreedy, CoresetMethod::Uniform] {
        let mut total = 0.0;
        for seed in 0..seeds {
            let store = correlated_cloud(seed, 1000, 0.8);
            let params = SvmParams {
                seed,
                ..SvmParams::default()
            };
            let full = train_separator(&store, std::slice::from_ref(&query), &params).unwrap();
            let core = build_coreset(
                &store,
                &CoresetSpec {
                    size: 100,
                    method,
                    seed,
                },
            )
            .unwrap();
            let small = train_separator_on(&store, &core, std::slice::from_ref(&query), &params)
                .unwrap()
                .separator;
            let top = |sep| {
                rank_by_hyperplane(&store, sep, 20)
                    .unwrap()
                    .iter()
                    .map(|h| h.id)
                    .collect::<Vec<_>>()
            };
            total += jaccard(&top(&full), &top(&small));
        }
        let mean = total / seeds as f64;
        eprintln!("{method:?} coreset: mean jaccard {mean:.3}");
        assert!(mean >= 0.7, "{method:?}: mean jaccard {mean}");
    }
}
