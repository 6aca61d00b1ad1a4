//! Models shipped with the crate.

pub const STOPWATCH: &str = include_str!("../models/stopwatch.json");
pub const TOGGLE: &str = include_str!("../models/toggle.json");
/// Three chained binary junction splits under a single state.
pub const CASCADE: &str = include_str!("../models/cascade.json");
/// Input-driven: two input variables, one event used as a clock.
pub const DRIVER: &str = include_str!("../models/driver.json");

pub fn all() -> [(&'static str, &'static str); 4] {
    [("stopwatch", STOPWATCH), ("toggle", TOGGLE), ("cascade", CASCADE), ("driver", DRIVER)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_model, to_json, Model};

    #[test]
    fn bundled_models_validate_and_round_trip() {
        for (name, text) in all() {
            let p = parse_model(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = parse_model(&to_json(&p)).unwrap();
            assert_eq!(p, again, "{name}");
        }
    }

    #[test]
    fn stopwatch_shape() {
        let m = Model::from_json(STOPWATCH).unwrap();
        let s = m.stats();
        assert_eq!((s.states, s.junctions, s.transitions), (6, 4, 13));
        assert_eq!(
            m.program.control_variables(),
            ["Stop", "Stop.Reset", "Stop.LapStop", "Run", "Run.Running", "Run.Lap"]
        );
    }

    #[test]
    fn driver_has_six_leaves_and_two_inputs() {
        let m = Model::from_json(DRIVER).unwrap();
        assert_eq!(m.stats().leaves, 6);
        assert_eq!(m.inputs().count(), 2);
    }
}
