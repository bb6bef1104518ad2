use foresight_stats::{
    cohens_d, posthoc, report, welch_t_test, Contrast, GaussianKde, Group, Observation, ObservationTable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn design(seed: u64, humans: usize, models: usize) -> ObservationTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for (group, n, base) in [(Group::Human, humans, 0.5), (Group::Model, models, 0.7)] {
        for s in 0..n {
            for p in 1..=5u8 {
                let jitter: f64 = rng.random_range(-0.1..0.1);
                rows.push(Observation {
                    subject_id: format!("{group}{s}"),
                    group,
                    period: p,
                    accuracy: (base + 0.04 * p as f64 + jitter).clamp(0.0, 1.0),
                });
            }
        }
    }
    ObservationTable::new(rows).unwrap()
}

#[test]
fn grid_has_sixteen_rows_in_table_order() {
    let rows = posthoc(&design(1, 29, 20), 0.05, 10).unwrap();
    assert_eq!(rows.len(), 16);
    assert_eq!(rows[0].contrast, Contrast::Group);
    assert!(rows[1..11].iter().all(|r| r.contrast == Contrast::Time && r.time.is_none()));
    assert_eq!((rows[1].a.as_str(), rows[1].b.as_str()), ("Period1", "Period2"));
    assert_eq!((rows[10].a.as_str(), rows[10].b.as_str()), ("Period4", "Period5"));
    let periods: Vec<Option<u8>> = rows[11..].iter().map(|r| r.time).collect();
    assert_eq!(periods, (1..=5).map(Some).collect::<Vec<_>>());
    assert!(rows[11..].iter().all(|r| r.contrast == Contrast::TimeGroup && r.a == "Human" && r.b == "Model"));
}

#[test]
fn dof_families_match_test_types() {
    let rows = posthoc(&design(2, 29, 20), 0.05, 10).unwrap();
    // 49 pooled subjects -> paired dof 48
    for r in rows.iter().filter(|r| r.contrast == Contrast::Time) {
        assert_eq!(r.dof, 48.0);
    }
    // Welch dofs are fractional and bounded by min(n) - 1 and n1 + n2 - 2
    for r in rows.iter().filter(|r| r.contrast != Contrast::Time) {
        assert!(r.dof > 19.0 && r.dof < 47.0, "dof {}", r.dof);
    }
}

#[test]
fn bonferroni_decisions_use_alpha_over_m() {
    let threshold = 0.05 / 10.0;
    assert_eq!(threshold, 0.005);
    for seed in 0..20 {
        for r in posthoc(&design(seed, 12, 10), 0.05, 10).unwrap() {
            assert_eq!(r.significant, r.p_unc < threshold);
            assert_eq!(r.p_adjust, (r.p_unc * 10.0).min(1.0));
        }
    }
}

#[test]
fn within_period_rows_agree_with_direct_tests() {
    let table = design(5, 7, 6);
    let rows = posthoc(&table, 0.05, 10).unwrap();
    let period3 = |g: Group| -> Vec<f64> {
        let mut v: Vec<(String, f64)> = table
            .rows()
            .iter()
            .filter(|r| r.group == g && r.period == 3)
            .map(|r| (r.subject_id.clone(), r.accuracy))
            .collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v.into_iter().map(|x| x.1).collect()
    };
    let direct = welch_t_test(&period3(Group::Human), &period3(Group::Model)).unwrap();
    let row = rows.iter().find(|r| r.time == Some(3)).unwrap();
    assert_eq!((row.t, row.dof, row.p_unc), (direct.t, direct.dof, direct.p));
    assert_eq!(row.cohen, cohens_d(&period3(Group::Human), &period3(Group::Model), false).unwrap());
}

#[test]
fn identical_groups_give_null_rows() {
    let base = design(8, 6, 6);
    // Copy the human subjects into the model group.
    let mut rows: Vec<Observation> = base.rows().iter().filter(|r| r.group == Group::Human).cloned().collect();
    let copies: Vec<Observation> = rows
        .iter()
        .map(|r| Observation { subject_id: format!("copy-{}", r.subject_id), group: Group::Model, ..r.clone() })
        .collect();
    rows.extend(copies);
    let table = ObservationTable::new(rows).unwrap();
    for r in posthoc(&table, 0.05, 10).unwrap().iter().filter(|r| r.contrast != Contrast::Time) {
        assert_eq!(r.t, 0.0);
        assert_eq!(r.cohen, 0.0);
        assert_eq!(r.p_unc, 1.0);
    }
}

#[test]
fn welch_three_element_brute_force() {
    let a = [0.62, 0.71, 0.55];
    let b = [0.81, 0.77, 0.9];
    let r = welch_t_test(&a, &b).unwrap();
    // brute-force evaluation of the Welch formulas
    let m = |x: &[f64]| x.iter().sum::<f64>() / 3.0;
    let v = |x: &[f64]| {
        let mu = m(x);
        x.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / 2.0
    };
    let (sa, sb) = (v(&a) / 3.0, v(&b) / 3.0);
    let t = (m(&a) - m(&b)) / (sa + sb).sqrt();
    let dof = (sa + sb).powi(2) / (sa * sa / 2.0 + sb * sb / 2.0);
    assert!((r.t - t).abs() < 1e-12);
    assert!((r.dof - dof).abs() < 1e-12);
}

#[test]
fn kde_matches_direct_double_loop() {
    let sample = [0.80, 0.81, 0.805, 0.79, 0.8, 0.812];
    let kde = GaussianKde::new(&sample).unwrap();
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let h = sd * n.powf(-0.2);
    assert!((kde.bandwidth() - h).abs() < 1e-15);
    for i in 0..200 {
        let x = 0.7 + i as f64 * 0.001;
        let mut direct = 0.0;
        for xi in sample {
            let z = (x - xi) / h;
            direct += (-(z * z) / 2.0).exp() / (h * (2.0 * std::f64::consts::PI).sqrt());
        }
        direct /= n;
        assert!((kde.density(x) - direct).abs() < 1e-12 * direct.max(1.0));
        assert!(kde.density(x) >= 0.0);
    }
}

#[test]
fn text_report_lists_every_row() {
    let table = design(4, 10, 8);
    let rows = posthoc(&table, 0.05, 10).unwrap();
    let text = report::format_posthoc(&rows, 0.05, 10);
    assert_eq!(text.lines().count(), 18);
    assert!(text.contains("Time * Group"));
    let anova = foresight_stats::mixed_anova(&table).unwrap();
    let a = report::format_anova(&anova);
    assert!(a.lines().nth(1).unwrap().starts_with("Group"));
    let mut csv = Vec::new();
    report::write_posthoc_csv(&mut csv, &rows).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 17);
}
