//! Multi-object search over scenes: find the best injective assignment of
//! query objects to scene objects under class, scene and spatial constraints.

use simsearch::multibody::{
    brute_force_best, count_alignments, strategy_constraint_first_traced,
    strategy_per_object_traced, Constraint, MultiQuery, QueryObject, SceneObject, SpatialRelation,
};
use simsearch::Embedding;

fn e(v: &[f32]) -> Embedding {
    Embedding::new(v.to_vec()).expect("finite")
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // two street scenes, each with people and cars
    let objects = vec![
        SceneObject::new(1, 0, "person", e(&[0.9, 0.1])).at(10.0, 50.0),
        SceneObject::new(1, 1, "car", e(&[0.1, 0.9])).at(14.0, 52.0),
        SceneObject::new(1, 2, "car", e(&[0.2, 0.8])).at(90.0, 40.0),
        SceneObject::new(2, 0, "person", e(&[1.0, 0.0])).at(30.0, 20.0),
        SceneObject::new(2, 1, "car", e(&[0.0, 1.0])).at(80.0, 25.0),
        SceneObject::new(2, 2, "dog", e(&[0.5, 0.5])).at(31.0, 22.0),
    ];
    let query = MultiQuery::new(vec![
        QueryObject {
            class_label: "person".into(),
            embedding: e(&[1.0, 0.0]),
        },
        QueryObject {
            class_label: "car".into(),
            embedding: e(&[0.0, 1.0]),
        },
    ]);
    let constraints = vec![
        Constraint::ClassMatch { slot: 0 },
        Constraint::ClassMatch { slot: 1 },
        Constraint::SameScene,
        Constraint::Spatial {
            i: 0,
            j: 1,
            relation: SpatialRelation::NextTo { max_dist: 10.0 },
        },
    ];

    println!(
        "{} candidate tuples",
        count_alignments(objects.len() as u64, query.len() as u64)
    );
    let brute = brute_force_best(&objects, &query, &constraints)?.expect("feasible");
    println!(
        "brute force:      {:?} score {:.3}",
        brute.mapping, brute.score
    );
    let (per, stats) = strategy_per_object_traced(&objects, &query, &constraints, 1)?;
    println!(
        "per object:       score {:.3}, {} tuples over {} rounds",
        per.expect("feasible").score,
        stats.tuples_evaluated,
        stats.rounds
    );
    let (cf, stats) = strategy_constraint_first_traced(&objects, &query, &constraints)?;
    println!(
        "constraint first: score {:.3}, {} tuples",
        cf.expect("feasible").score,
        stats.tuples_evaluated
    );

    // without the proximity requirement the closer-matching scene 2 wins
    let loose = &constraints[..3];
    println!(
        "without next_to:  {:?}",
        brute_force_best(&objects, &query, loose)?
            .expect("feasible")
            .mapping
    );
    Ok(())
}
