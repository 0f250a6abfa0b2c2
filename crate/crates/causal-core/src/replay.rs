//! Deterministic replay of a recorded log against a protocol.
//!
//! The audit takes the violating run as a log — labels only, no data. To
//! analyze it, the run's trace (stores included) is reconstructed by
//! driving the protocol through exactly the logged labels in order. A log
//! that cannot be driven this way does not belong to the protocol and is
//! rejected.

use crate::label::Label;
use crate::semantics::{enabled_steps, Config, Trace, TraceStep};
use crate::term::PrimitiveRegistry;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("the log is not realizable by this protocol: label #{index} ({label:?}) is not enabled at that point")]
    UnrealizableLog { index: usize, label: Label },
}

/// Drive `start` through `log`, label by label. Returns the reconstructed
/// trace. Intended for concrete programs, whose execution never forks; if a
/// step does fork, the first successor (in resolution order) is followed.
pub fn replay_log(
    start: &Config,
    reg: &PrimitiveRegistry,
    log: &[Label],
) -> Result<Trace, ReplayError> {
    let starts = start.clone().settle();
    let mut last_err = ReplayError::UnrealizableLog {
        index: 0,
        label: *log.first().unwrap_or(&Label::local(0, 0)),
    };
    for cfg in starts {
        match try_replay(&cfg, reg, log) {
            Ok(trace) => return Ok(trace),
            Err(e) => last_err = e,
        }
    }
    Err(last_err)
}

fn try_replay(start: &Config, reg: &PrimitiveRegistry, log: &[Label]) -> Result<Trace, ReplayError> {
    let mut trace = Trace { initial: start.stores(), steps: Vec::new() };
    let mut cfg = start.clone();
    for (index, &label) in log.iter().enumerate() {
        let Some((_, choice)) = enabled_steps(&cfg).into_iter().find(|(l, _)| *l == label) else {
            return Err(ReplayError::UnrealizableLog { index, label });
        };
        let mut succs = crate::semantics::execute(&cfg, choice, reg);
        debug_assert!(!succs.is_empty());
        cfg = succs.remove(0);
        trace.steps.push(TraceStep { label, stores: cfg.stores() });
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parse::parse_protocol;
    use crate::semantics::initial_config;
    use crate::term::Term;

    fn protocol() -> crate::lang::Protocol {
        parse_protocol(
            r#"
            thread A { program { 1: x = new(); 2: send(B, x); 3: y = recv(B); 4: put(got, y); } }
            thread B { program { 1: m = recv(A); 2: send(A, m); } }
            "#,
        )
        .unwrap()
    }

    #[test]
    fn replays_a_recorded_run() {
        let p = protocol();
        let reg = PrimitiveRegistry::default();
        let log = vec![
            Label::local(0, 1),
            Label::sync(0, 2, 1, 1),
            Label::sync(1, 2, 0, 3),
            Label::local(0, 4),
        ];
        let trace = replay_log(&initial_config(&p), &reg, &log).unwrap();
        assert_eq!(trace.log(), log);
        // The nonce made the round trip.
        let final_stores = &trace.steps.last().unwrap().stores;
        assert_eq!(final_stores[0]["got"], Term::Nonce(0));
    }

    #[test]
    fn out_of_order_log_is_rejected() {
        let p = protocol();
        let reg = PrimitiveRegistry::default();
        let log = vec![Label::sync(0, 2, 1, 1), Label::local(0, 1)];
        let err = replay_log(&initial_config(&p), &reg, &log).unwrap_err();
        let ReplayError::UnrealizableLog { index, .. } = err;
        assert_eq!(index, 0);
    }
}
