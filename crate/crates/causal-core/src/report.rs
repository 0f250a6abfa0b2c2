//! End-to-end analysis and its JSON report.
//!
//! [`run_analysis`] wires the pipeline together: validate the protocol,
//! replay the log, confirm the violation, find the minimal sufficient
//! projected prefixes (phase one), minimize each into actual causes
//! (phase two), and — when norms are given — classify the implicated
//! threads and check whether compliant runs are safe.
//!
//! The report is plain JSON built from deterministic data only (no clocks,
//! no host paths), so equal inputs produce byte-identical reports
//! regardless of thread count.

use crate::accountability::{
    check_necessity, classify_threads, AccountabilityError, Classification, Necessity,
};
use crate::cause::{
    actual_causes, lamport_causes, ActualCause, CauseEnv, CauseError, Phase2Options, SearchMode,
};
use crate::explore::ExploreParams;
use crate::label::{log_to_json, Log};
use crate::lang::{Protocol, ThreadDef};
use crate::property::{violates, Property, PropertyError, PropertyRegistry};
use crate::replay::{replay_log, ReplayError};
use crate::semantics::{initial_config_of, validate, SemanticsError};
use crate::term::{CmpContext, PrimitiveRegistry, Truth};
use serde_json::{json, Value};
use thiserror::Error;

/// Tuning for one end-to-end analysis.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub mode: SearchMode,
    /// Node budget for each exhaustive search.
    pub budget: u64,
    /// Cap on distinct phase-two candidates before falling back to the
    /// greedy result.
    pub candidate_cap: u64,
    /// Partial-order reduction in the compliant-runs search.
    pub por: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            mode: SearchMode::Exact,
            budget: 2_000_000,
            candidate_cap: 1 << 20,
            por: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("the protocol declares no property to audit")]
    NoProperty,
    #[error("nothing to do: provide a log to explain or norms to check")]
    NothingToDo,
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
    #[error(transparent)]
    Cause(#[from] CauseError),
    #[error(transparent)]
    Accountability(#[from] AccountabilityError),
}

/// What an analysis concluded, plus the serialized report.
#[derive(Debug, Clone)]
pub struct Analysis {
    pub report: Value,
    /// True when the supplied log was confirmed to violate the property.
    pub violated: bool,
}

fn classification_str(c: Classification) -> &'static str {
    match c {
        Classification::NormFollower => "norm_follower",
        Classification::DeviantHarmless => "deviant_harmless",
        Classification::DeviantImplicated => "deviant_implicated",
    }
}

/// Run the full pipeline.
///
/// * `log` — the violating run to explain, if any.
/// * `norms` — the programs the threads were supposed to run, if known.
///
/// With only norms, the analysis just checks whether compliant runs can
/// violate. With a log, the two causal phases run; with both, implicated
/// threads are additionally classified against their norms.
pub fn run_analysis(
    protocol: &Protocol,
    norms: Option<&[ThreadDef]>,
    log: Option<&Log>,
    opts: &AnalysisOptions,
) -> Result<Analysis, AnalysisError> {
    let reg = PrimitiveRegistry::default();
    let preg = PropertyRegistry::default();
    validate(protocol, &reg)?;
    let spec = protocol.property.as_ref().ok_or(AnalysisError::NoProperty)?;
    let property = Property::from_spec(spec, &preg)?;
    let names = protocol.thread_names();
    if log.is_none() && norms.is_none() {
        return Err(AnalysisError::NothingToDo);
    }

    let mut report = json!({
        "threads": names,
        "violation": false,
    });

    let mut violated = false;
    let mut flat_causes: Vec<ActualCause> = Vec::new();

    if let Some(log) = log {
        let trace = replay_log(&initial_config_of(&protocol.threads), &reg, log)?;
        violated = violates(&property, &trace, &CmpContext::new()) == Truth::True;
        report["violation"] = json!(violated);
        report["log"] = log_to_json(log, &names);
        if violated {
            let env = CauseEnv {
                protocol,
                reg: &reg,
                property: &property,
                budget: opts.budget,
            };
            let phase1 = lamport_causes(&env, log)?;
            let p2opts = Phase2Options {
                mode: opts.mode,
                candidate_cap: opts.candidate_cap,
                ..Default::default()
            };
            let mut exhaustive = true;
            let mut p2_checks = 0u64;
            let mut p2_nodes = 0u64;
            for lamport in &phase1.causes {
                let phase2 = actual_causes(&env, lamport, &p2opts)?;
                exhaustive &= phase2.exhaustive;
                p2_checks += phase2.checks;
                p2_nodes += phase2.nodes;
                for cause in phase2.causes {
                    if !flat_causes.contains(&cause) {
                        flat_causes.push(cause);
                    }
                }
            }
            flat_causes.sort_by(|a, b| a.sublog.cmp(&b.sublog));

            report["lamport"] = Value::Array(
                phase1.causes.iter().map(|l| log_to_json(l, &names)).collect(),
            );
            report["actual"] = Value::Array(
                flat_causes
                    .iter()
                    .map(|c| {
                        json!({
                            "sublog": log_to_json(&c.sublog, &names),
                            "program_cause": c
                                .program_cause
                                .iter()
                                .map(|&t| names[t].clone())
                                .collect::<Vec<_>>(),
                        })
                    })
                    .collect(),
            );
            report["diagnostics"] = json!({
                "mode": match opts.mode {
                    SearchMode::Exact => "exact",
                    SearchMode::Greedy => "greedy",
                },
                "exhaustive": exhaustive,
                "phase1": { "checks": phase1.checks, "nodes": phase1.nodes },
                "phase2": { "checks": p2_checks, "nodes": p2_nodes },
            });
        }
    }

    if let Some(norms) = norms {
        let norm_protocol = Protocol {
            threads: norms.to_vec(),
            property: protocol.property.clone(),
        };
        validate(&norm_protocol, &reg)?;
        let mut acc = json!({});
        if !flat_causes.is_empty() {
            let verdicts = classify_threads(&protocol.threads, norms, &flat_causes)?;
            let mut obj = serde_json::Map::new();
            for (t, v) in verdicts {
                obj.insert(names[t].clone(), json!(classification_str(v)));
            }
            acc["verdicts"] = Value::Object(obj);
        }
        let params = ExploreParams { por: opts.por, budget: opts.budget };
        let necessity = check_necessity(norms, &reg, &property, &params)?;
        acc["norm_compliance"] = match necessity {
            Necessity::Confirmed { states } => json!({
                "violation_reachable": false,
                "states": states,
            }),
            Necessity::Counterexample { log, states } => json!({
                "violation_reachable": true,
                "states": states,
                "counterexample": log_to_json(&log, &names),
            }),
        };
        report["accountability"] = acc;
    }

    Ok(Analysis { report, violated })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::Label;
    use crate::parse::parse_protocol;

    fn relay() -> Protocol {
        parse_protocol(
            r#"
            thread W {
              program {
                1: x = 1;
                2: y = 2;
                3: z = 3;
                4: send(R, x);
              }
            }
            thread R {
              program {
                1: m = recv(W);
                2: put(seen, m);
              }
            }
            property { type = builtin:forbidden_one; }
            "#,
        )
        .unwrap()
    }

    fn relay_log() -> Log {
        vec![
            Label::local(0, 1),
            Label::local(0, 2),
            Label::local(0, 3),
            Label::sync(0, 4, 1, 1),
            Label::local(1, 2),
        ]
    }

    #[test]
    fn report_names_threads_and_minimizes() {
        let p = relay();
        let log = relay_log();
        let out = run_analysis(&p, None, Some(&log), &AnalysisOptions::default()).unwrap();
        assert!(out.violated);
        let actual = out.report["actual"].as_array().unwrap();
        assert_eq!(actual.len(), 1);
        assert_eq!(
            actual[0]["program_cause"],
            serde_json::json!(["W", "R"])
        );
        assert_eq!(out.report["diagnostics"]["exhaustive"], serde_json::json!(true));
    }

    #[test]
    fn norms_only_checks_compliance() {
        let p = relay();
        let norms = parse_protocol(
            r#"
            thread W { program { 1: send(R, 9); } }
            thread R { program { 1: m = recv(W); 2: put(seen, m); } }
            "#,
        )
        .unwrap()
        .threads;
        let out = run_analysis(&p, Some(&norms), None, &AnalysisOptions::default()).unwrap();
        assert!(!out.violated);
        assert_eq!(
            out.report["accountability"]["norm_compliance"]["violation_reachable"],
            serde_json::json!(false)
        );
    }

    #[test]
    fn neither_log_nor_norms_is_an_error() {
        let p = relay();
        assert!(matches!(
            run_analysis(&p, None, None, &AnalysisOptions::default()),
            Err(AnalysisError::NothingToDo)
        ));
    }

    #[test]
    fn report_is_deterministic() {
        let p = relay();
        let log = relay_log();
        let a = run_analysis(&p, None, Some(&log), &AnalysisOptions::default()).unwrap();
        let b = run_analysis(&p, None, Some(&log), &AnalysisOptions::default()).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }
}
