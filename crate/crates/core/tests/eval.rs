use glee_core::au::ClassifierConfig;
use glee_core::embed::EmbeddingConfig;
use glee_core::eval::{ave_var, ave_var_records, evaluate, f1_per_au, report_records, report_table};
use glee_core::train::fixtures::PlantedAuFixture;
use glee_core::train::{GleeModel, TrainConfig};
use glee_core::Error;
use proptest::prelude::*;

/// Frames realizing the given confusion counts for one AU.
fn frames(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<[bool; 1]>, Vec<[bool; 1]>) {
    let mut p = Vec::new();
    let mut l = Vec::new();
    for (n, pv, lv) in [
        (tp, true, true),
        (fp, true, false),
        (fn_, false, true),
        (tn, false, false),
    ] {
        for _ in 0..n {
            p.push([pv]);
            l.push([lv]);
        }
    }
    (p, l)
}

#[test]
fn crafted_confusion_tables() {
    // (tp, fp, fn, tn, F1 worked out by hand from precision and recall)
    let cases: [(usize, usize, usize, usize, f64); 10] = [
        (2, 1, 1, 0, 2.0 / 3.0),
        (5, 0, 0, 5, 1.0),
        (0, 3, 2, 1, 0.0),
        (1, 0, 3, 2, 2.0 / 5.0),
        (3, 3, 0, 0, 2.0 / 3.0),
        (4, 1, 2, 9, 8.0 / 11.0),
        (1, 1, 1, 1, 1.0 / 2.0),
        (7, 2, 5, 0, 14.0 / 21.0),
        (10, 0, 1, 4, 20.0 / 21.0),
        (0, 0, 0, 6, 1.0),
    ];
    for (tp, fp, fn_, tn, want) in cases {
        let (p, l) = frames(tp, fp, fn_, tn);
        let r = f1_per_au(&p, &l).unwrap();
        let s = &r.per_au[0];
        assert_eq!((s.tp, s.fp, s.fn_, s.tn), (tp, fp, fn_, tn));
        assert_eq!(s.f1, want, "{tp} {fp} {fn_} {tn}");
        assert_eq!(s.vacuous, tp + fp + fn_ == 0);
        assert_eq!(s.tp + s.fp + s.fn_ + s.tn, r.frames);
    }
}

#[test]
fn perfect_agreement_scores_one() {
    let l = vec![vec![true, false, true], vec![false, false, true]];
    let r = f1_per_au(&l, &l).unwrap();
    assert_eq!(r.per_au_f1(), vec![1.0, 1.0, 1.0]);
    assert_eq!(r.average_f1, 1.0);
    assert_eq!(r.vacuous_count(), 1);
}

#[test]
fn mismatched_shapes_are_rejected() {
    let a = vec![vec![true, false]];
    let b = vec![vec![true]];
    assert!(matches!(f1_per_au(&a, &b), Err(Error::Shape(_))));
    assert!(matches!(
        f1_per_au(&a, &[vec![true, false], vec![true, true]]),
        Err(Error::Shape(_))
    ));
    let empty: Vec<Vec<bool>> = Vec::new();
    assert!(f1_per_au(&empty, &empty).is_err());
}

proptest! {
    #[test]
    fn average_is_the_mean_and_order_does_not_matter(
        rows in prop::collection::vec((prop::collection::vec(any::<bool>(), 4), prop::collection::vec(any::<bool>(), 4)), 1..30),
        perm_seed in any::<u64>(),
    ) {
        let (p, l): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
        let r = f1_per_au(&p, &l).unwrap();
        prop_assert_eq!(r.average_f1, r.per_au_f1().iter().sum::<f64>() / 4.0);
        let mut idx: Vec<usize> = (0..rows.len()).collect();
        let mut state = perm_seed | 1;
        for i in (1..idx.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            idx.swap(i, (state % (i as u64 + 1)) as usize);
        }
        let pp: Vec<_> = idx.iter().map(|&i| p[i].clone()).collect();
        let ll: Vec<_> = idx.iter().map(|&i| l[i].clone()).collect();
        prop_assert_eq!(f1_per_au(&pp, &ll).unwrap(), r);
    }

    #[test]
    fn ave_var_ignores_ordering(
        rows in prop::collection::vec((prop::collection::vec(-1.0f32..1.0, 16), prop::collection::vec(0u8..2, 2)), 1..20),
    ) {
        let (e, l): (Vec<_>, Vec<_>) = rows.iter().cloned().unzip();
        let a = ave_var(&e, &l).unwrap();
        let (er, lr): (Vec<_>, Vec<_>) = rows.iter().rev().cloned().unzip();
        let b = ave_var(&er, &lr).unwrap();
        prop_assert!(a.ave_var >= 0.0);
        prop_assert!((a.ave_var - b.ave_var).abs() <= 1e-12 * (1.0 + a.ave_var));
        prop_assert_eq!(a.groups.len(), b.groups.len());
    }
}

#[test]
fn two_point_group_has_twice_the_squared_norm() {
    let e: Vec<f32> = (0..16).map(|i| (i as f32 - 7.5) / 3.0).collect();
    let neg: Vec<f32> = e.iter().map(|v| -v).collect();
    let r = ave_var(&[e.clone(), neg], &[[1u8, 0], [1, 0]]).unwrap();
    let want: f64 = e.iter().map(|&v| 2.0 * f64::from(v) * f64::from(v)).sum();
    assert_eq!(r.groups.len(), 1);
    assert_eq!(r.groups[0].variance, want);
    assert_eq!(r.ave_var, want);
}

#[test]
fn identical_or_singleton_groups_have_no_variance() {
    let e = vec![0.3f32; 16];
    let r = ave_var(&[e.clone(), e.clone(), e.clone()], &[[1u8], [1], [1]]).unwrap();
    assert_eq!(r.ave_var, 0.0);
    let s = ave_var(&[e.clone(), vec![1.0; 16]], &[[0u8], [1]]).unwrap();
    assert_eq!(s.ave_var, 0.0);
    assert!(s.groups.iter().all(|g| g.singleton));
    let table_lines = ave_var_records(&s).lines().count();
    assert_eq!(table_lines, 3);
}

fn never_firing_model(num_aus: usize) -> GleeModel {
    let cls = ClassifierConfig {
        num_aus,
        ..ClassifierConfig::default()
    };
    let mut model = GleeModel::new(&EmbeddingConfig::compact(), &cls, 2).unwrap();
    for name in ["au.joint.weight", "au.joint.bias"] {
        let id = model.store.id(name).unwrap();
        let fill = if name.ends_with("bias") { -50.0 } else { 0.0 };
        model.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = fill);
    }
    model
}

#[test]
fn silent_classifier_on_silent_labels_is_vacuously_perfect() {
    let fx = PlantedAuFixture::generate(4, 3, 2, 1).unwrap();
    let mut data = fx.data(&TrainConfig::finetune().alignment).unwrap();
    for f in &mut data.frames {
        f.labels = vec![0, 0];
    }
    let model = never_firing_model(2);
    let out = evaluate(&model, &data).unwrap();
    assert_eq!(out.report.average_f1, 1.0);
    assert_eq!(out.report.vacuous_count(), 2);
    assert_eq!(out.report.frames, 3);
    assert!(out.predictions.iter().all(|p| p.occurrences.iter().all(|&o| !o)));
    let again = evaluate(&model, &data).unwrap();
    assert_eq!(again.report, out.report);
    assert_eq!(again.embeddings, out.embeddings);

    let names = data.au_names.clone();
    let table = report_table(&out.report, &names);
    assert!(table
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("AU01\t0\t0\t0\t3\t1.0000\tvacuous"));
    let records: Vec<serde_json::Value> = report_records(&out.report, &names)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    assert_eq!(records[2]["kind"], "summary");
    assert_eq!(records[2]["average_f1"], 1.0);
}

#[test]
fn au_count_mismatch_is_refused() {
    let fx = PlantedAuFixture::generate(4, 2, 3, 1).unwrap();
    let data = fx.data(&TrainConfig::finetune().alignment).unwrap();
    assert!(matches!(
        evaluate(&never_firing_model(2), &data),
        Err(Error::InvalidInput(_))
    ));
}
