//! JSON model files.
//!
//! ```json
//! {"type": "finite", "neurons": [{"id": 1, "rates": [1.0, 0.5], "post": {"1": [2]}}]}
//! {"type": "decaying_feedforward", "a0": 1, "r": 0.1, "s": [1, 1], "window": [1]}
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{
    DecayingFeedforward, FiniteNetwork, ModelError, ModelSpec, NeuronEntry, NeuronId, RateVector, Threshold,
    Topology,
};

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error at line {line}, column {column}: {message}")]
    SchemaError { line: usize, column: usize, message: String },
    /// Pre-sets are always derived from post-sets, so this cannot occur for
    /// the current schema.
    #[error("presynaptic sets cannot be made dual to the postsynaptic ones")]
    DualityImpossible,
    #[error(transparent)]
    Model(#[from] ModelError),
}

const FINITE: &str = "finite";
const DECAYING_FEEDFORWARD: &str = "decaying_feedforward";

#[derive(Deserialize)]
struct Header {
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FiniteFile {
    #[serde(rename = "type")]
    kind: String,
    neurons: Vec<NeuronFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NeuronFile {
    id: u64,
    rates: Vec<f64>,
    #[serde(default)]
    post: BTreeMap<Threshold, Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FamilyFile {
    #[serde(rename = "type")]
    kind: String,
    a0: f64,
    r: f64,
    s: Vec<f64>,
    #[serde(default)]
    window: Vec<u64>,
}

fn schema_error(e: serde_json::Error) -> ModelFileError {
    ModelFileError::SchemaError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

pub fn parse_model_str(text: &str) -> Result<ModelSpec, ModelFileError> {
    // the tag is read first so the body parses directly, keeping positions
    let header: Header = serde_json::from_str(text).map_err(schema_error)?;
    match header.kind.as_str() {
        FINITE => {
            let f: FiniteFile = serde_json::from_str(text).map_err(schema_error)?;
            let entries = f
                .neurons
                .into_iter()
                .map(|n| NeuronEntry {
                    id: NeuronId(n.id),
                    rates: RateVector::new(n.rates),
                    post: n
                        .post
                        .into_iter()
                        .map(|(k, targets)| (k, targets.into_iter().map(NeuronId).collect()))
                        .collect(),
                })
                .collect();
            Ok(ModelSpec::finite(FiniteNetwork::new(entries)?))
        }
        DECAYING_FEEDFORWARD => {
            let f: FamilyFile = serde_json::from_str(text).map_err(schema_error)?;
            Ok(ModelSpec::decaying_feedforward(DecayingFeedforward::new(f.a0, f.r, f.s, f.window)?))
        }
        other => Err(ModelFileError::SchemaError {
            line: 1,
            column: 1,
            message: format!("unknown model type `{other}` (expected {FINITE} or {DECAYING_FEEDFORWARD})"),
        }),
    }
}

pub fn parse_model(path: impl AsRef<Path>) -> Result<ModelSpec, ModelFileError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_model_str(&text)
}

fn to_json(model: &ModelSpec, pretty: bool) -> String {
    match model.topology() {
        Topology::Finite(net) => render(pretty, &FiniteFile {
            kind: FINITE.into(),
            neurons: net
                .entries()
                .into_iter()
                .map(|e| NeuronFile {
                    id: e.id.0,
                    rates: e.rates.as_slice().to_vec(),
                    post: e.post.into_iter().map(|(k, t)| (k, t.into_iter().map(|n| n.0).collect())).collect(),
                })
                .collect(),
        }),
        Topology::DecayingFeedforward(f) => render(pretty, &FamilyFile {
            kind: DECAYING_FEEDFORWARD.into(),
            a0: f.a0(),
            r: f.r(),
            s: f.profile().as_slice().to_vec(),
            window: f.window().to_vec(),
        }),
    }
}

fn render<T: Serialize>(pretty: bool, value: &T) -> String {
    if pretty {
        serde_json::to_string_pretty(value)
    } else {
        serde_json::to_string(value)
    }
    .expect("model serializes")
}

/// Canonical pretty-printed form; parsing it yields an identical model.
pub fn write_model(model: &ModelSpec) -> String {
    let mut text = to_json(model, true);
    text.push('\n');
    text
}

/// SHA-256 of the compact canonical form, hex encoded.
pub fn model_digest(model: &ModelSpec) -> String {
    let compact = to_json(model, false);
    hex::encode(Sha256::digest(compact.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{big_lambda, build_decaying_feedforward, check_conditions};
    use proptest::prelude::*;

    const M2: &str = r#"{"type": "finite", "neurons": [
        {"id": 1, "rates": [1.0, 0.5], "post": {"1": [2]}},
        {"id": 2, "rates": [9.0, 1.0]}
    ]}"#;

    #[test]
    fn parses_m2() {
        let m = parse_model_str(M2).unwrap();
        assert_eq!(big_lambda(&m, NeuronId(2)).unwrap(), 10.5);
        assert_eq!(m.pre(NeuronId(2), 1).collect::<Vec<_>>(), vec![NeuronId(1)]);
    }

    #[test]
    fn missing_rates_is_a_schema_error() {
        let err = parse_model_str(r#"{"type": "finite", "neurons": [{"id": 1}]}"#).unwrap_err();
        match err {
            ModelFileError::SchemaError { line, message, .. } => {
                assert_eq!(line, 1);
                assert!(message.contains("rates"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let err = parse_model_str(r#"{"type": "finite", "neurons": [{"id": 1, "rates": [1], "weight": 2}]}"#);
        assert!(matches!(err, Err(ModelFileError::SchemaError { .. })));
        let err = parse_model_str(r#"{"type": "decaying_feedforward", "a0": 1, "r": 0.1, "s": [1], "extra": 0}"#);
        assert!(matches!(err, Err(ModelFileError::SchemaError { .. })));
        let err = parse_model_str(r#"{"type": "ring"}"#);
        assert!(matches!(err, Err(ModelFileError::SchemaError { .. })));
    }

    #[test]
    fn model_errors_pass_through() {
        let err = parse_model_str(r#"{"type": "finite", "neurons": [{"id": 1, "rates": [1, 1], "post": {"1": [4]}}]}"#);
        assert!(matches!(err, Err(ModelFileError::Model(ModelError::UnknownNeuron(NeuronId(4))))));
    }

    #[test]
    fn countable_family() {
        let m = parse_model_str(r#"{"type":"decaying_feedforward","a0":1,"r":0.1,"s":[1,1],"window":[1]}"#).unwrap();
        assert_eq!(m, build_decaying_feedforward(1.0, 0.1, vec![1.0, 1.0], vec![1]).unwrap());
        let scope: Vec<_> = (0..10).map(NeuronId).collect();
        assert!(check_conditions(&m, &scope).unwrap().passed);
        assert_eq!(parse_model_str(&write_model(&m)).unwrap(), m);
    }

    #[test]
    fn digest_is_stable_and_discriminating() {
        let a = parse_model_str(M2).unwrap();
        let b = parse_model_str(&write_model(&a)).unwrap();
        assert_eq!(model_digest(&a), model_digest(&b));
        assert_eq!(model_digest(&a).len(), 64);
        let c = parse_model_str(&M2.replace("9.0", "8.0")).unwrap();
        assert_ne!(model_digest(&a), model_digest(&c));
    }

    fn arb_network() -> impl Strategy<Value = ModelSpec> {
        (1usize..6).prop_flat_map(|n| {
            let neuron = (
                prop::collection::vec(0.0f64..10.0, 1..4),
                prop::collection::btree_map(1u32..4, prop::collection::vec(0..n as u64, 0..4), 0..3),
            );
            prop::collection::vec(neuron, n).prop_map(|ns| {
                let entries = ns
                    .into_iter()
                    .enumerate()
                    .map(|(id, (rates, post))| NeuronEntry {
                        id: NeuronId(id as u64),
                        rates: RateVector::new(rates),
                        post: post
                            .into_iter()
                            .map(|(k, t)| (k, t.into_iter().map(NeuronId).collect()))
                            .collect(),
                    })
                    .collect();
                ModelSpec::finite(FiniteNetwork::new(entries).unwrap())
            })
        })
    }

    proptest! {
        #[test]
        fn finite_round_trip(m in arb_network()) {
            let text = write_model(&m);
            let back = parse_model_str(&text).unwrap();
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(write_model(&back), text);
        }
    }
}
