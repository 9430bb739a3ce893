use upgan::gradcheck::{gradcheck_suite, GradcheckOptions, Objective, RowStatus};
use upgan::losses::{Group, Term};
use upgan::models::NetworkId;

#[test]
fn analytic_gradients_match_finite_differences() {
    let report = gradcheck_suite(&GradcheckOptions::default()).unwrap();
    print!("{}", report.to_tsv());
    assert!(report.passed(), "failures: {:?}", report.failures());
    // Detached paths must be reported as absent, not silently skipped.
    for net in [NetworkId::GX, NetworkId::GY, NetworkId::Q] {
        assert_eq!(
            report.row(Objective::Term(Term::GanD), net).unwrap().status,
            RowStatus::Absent
        );
    }
    assert_eq!(
        report
            .row(Objective::Term(Term::C), NetworkId::Q)
            .unwrap()
            .status,
        RowStatus::Absent
    );
    for g in Group::ORDER {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.objective == Objective::Group(g))
            .collect();
        assert!(!rows.is_empty());
        assert!(rows
            .iter()
            .all(|r| r.status == RowStatus::Pass && r.coords > 0 && r.coords <= 20));
    }
}

#[test]
fn corrupted_gradient_is_flagged() {
    let target = (Objective::Term(Term::Rec), NetworkId::GX);
    let opts = GradcheckOptions {
        corrupt: Some(target),
        ..GradcheckOptions::default()
    };
    let report = gradcheck_suite(&opts).unwrap();
    assert!(!report.passed());
    let failures = report.failures();
    assert_eq!(failures.len(), 1);
    assert_eq!((failures[0].objective, failures[0].network), target);
    assert_eq!(failures[0].status, RowStatus::Fail);
}
