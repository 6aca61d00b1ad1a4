use std::time::Duration;

use chartbmc::solver::{SatResult, SessionState, SolverError, SolverSession, Sort};
use num_bigint::BigInt;

const SOLVERS: &[&str] = &["z3 -in", "yices-smt2 --incremental"];

#[test]
fn positive_witness() {
    for cmd in SOLVERS {
        let mut s = SolverSession::open(cmd).unwrap();
        s.declare("x", Sort::Int).unwrap();
        s.assert("(> x 0)").unwrap();
        assert_eq!(s.check_sat(None).unwrap(), SatResult::Sat, "{cmd}");
        let m = s.get_model().unwrap();
        assert!(m.int("x").unwrap() >= &BigInt::from(1), "{cmd}");
        s.close().unwrap();
    }
}

#[test]
fn contradiction_is_unsat() {
    for cmd in SOLVERS {
        let mut s = SolverSession::open(cmd).unwrap();
        s.declare("x", Sort::Int).unwrap();
        s.assert("(and (> x 0) (< x 0))").unwrap();
        assert_eq!(s.check_sat(None).unwrap(), SatResult::Unsat, "{cmd}");
    }
}

#[test]
fn assumptions_do_not_persist() {
    for cmd in SOLVERS {
        let mut s = SolverSession::open(cmd).unwrap();
        s.declare("x", Sort::Int).unwrap();
        s.declare("a", Sort::Bool).unwrap();
        s.assert("(=> a (< x 0))").unwrap();
        s.assert("(> x 0)").unwrap();
        assert_eq!(s.check_sat_assuming(&["a".into()], None).unwrap(), SatResult::Unsat, "{cmd}");
        assert_eq!(s.check_sat(None).unwrap(), SatResult::Sat, "{cmd}");
        assert_eq!(s.get_model().unwrap().bool("a"), Some(false), "{cmd}");
    }
}

#[test]
fn pop_restores_assertions() {
    for cmd in SOLVERS {
        let mut s = SolverSession::open(cmd).unwrap();
        s.declare("x", Sort::Int).unwrap();
        s.push().unwrap();
        s.declare("p", Sort::Bool).unwrap();
        s.assert("(and p (not p))").unwrap();
        assert_eq!(s.check_sat(None).unwrap(), SatResult::Unsat, "{cmd}");
        s.pop().unwrap();
        assert_eq!(s.depth(), 0);
        assert_eq!(s.check_sat(None).unwrap(), SatResult::Sat, "{cmd}");
        assert_eq!(s.get_model().unwrap().0.len(), 1);
        assert!(matches!(s.pop(), Err(SolverError::FrameUnderflow)));
    }
}

#[test]
fn negative_values_decode() {
    let mut s = SolverSession::open("z3 -in").unwrap();
    s.declare("y", Sort::Int).unwrap();
    s.assert("(= y (- 0 7))").unwrap();
    assert_eq!(s.check_sat(None).unwrap(), SatResult::Sat);
    assert_eq!(s.get_model().unwrap().int("y"), Some(&BigInt::from(-7)));
}

#[test]
fn protocol_error_is_fail_stop() {
    let mut s = SolverSession::open("z3 -in").unwrap();
    assert!(matches!(s.assert("(> undeclared 0)"), Err(SolverError::Protocol(_))));
    assert_eq!(s.state(), SessionState::Failed);
    assert!(matches!(s.check_sat(None), Err(SolverError::Unusable(SessionState::Failed))));
}

#[test]
fn timeout_yields_unknown() {
    // A fake solver that acknowledges everything and never answers check-sat.
    use std::os::unix::fs::PermissionsExt;
    let path = std::env::temp_dir().join(format!("chartbmc-stall-{}.sh", std::process::id()));
    std::fs::write(
        &path,
        "#!/bin/sh\nwhile read l; do case \"$l\" in \"(check-sat)\") sleep 30;; *) echo success;; esac; done\n",
    )
    .unwrap();
    std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
    let mut s = SolverSession::open(path.to_str().unwrap()).unwrap();
    s.declare("x", Sort::Int).unwrap();
    let t0 = std::time::Instant::now();
    assert_eq!(s.check_sat(Some(Duration::from_millis(200))).unwrap(), SatResult::Unknown);
    assert!(t0.elapsed() < Duration::from_secs(5));
    assert_eq!(s.state(), SessionState::Failed);
    assert!(s.assert("true").is_err());
    let _ = std::fs::remove_file(path);
}
