//! Python bindings. Configs cross the boundary as JSON strings; transcripts
//! come back as JSONL text so Python sees the same bytes the CLI writes.

use std::borrow::Cow;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use semcomm::backend::mock::{mock_attention, mock_distance, mock_generate, mock_target};
use semcomm::config::Aggregation;
use semcomm::metrics;
use semcomm::policy;
use semcomm::{MockBackendConfig, PolicyKind, Ports, Sentence, SessionConfig, SessionTranscript};

fn value_err(e: impl ToString) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sentence(caption: &str) -> PyResult<Sentence> {
    semcomm::tokenize(caption).map_err(value_err)
}

fn mock_cfg(mock: Option<&str>, seed: u64) -> PyResult<MockBackendConfig> {
    let cfg: MockBackendConfig = match mock {
        Some(json) => serde_json::from_str(json).map_err(value_err)?,
        None => MockBackendConfig::default(),
    };
    cfg.validate().map_err(value_err)?;
    Ok(cfg.with_seed(seed))
}

fn session_cfg(
    session: Option<&str>,
    policy: Option<&str>,
    threshold: Option<f64>,
    seed: u64,
) -> PyResult<SessionConfig> {
    let mut cfg: SessionConfig = match session {
        Some(json) => serde_json::from_str(json).map_err(value_err)?,
        None => SessionConfig::default(),
    };
    if let Some(p) = policy {
        cfg.policy = p.parse::<PolicyKind>().map_err(value_err)?;
    }
    if let Some(t) = threshold {
        cfg.threshold = t;
    }
    cfg.seed = seed;
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// Words of `caption` as written, punctuation stripped.
#[pyfunction]
fn tokenize(caption: &str) -> PyResult<Vec<String>> {
    Ok(sentence(caption)?
        .words()
        .iter()
        .map(|w| w.text.clone())
        .collect())
}

/// Mock attention as nested lists indexed `[layer][head][row][col]`.
#[pyfunction]
#[pyo3(signature = (caption, seed = 0, mock = None))]
fn attention(caption: &str, seed: u64, mock: Option<&str>) -> PyResult<Vec<Vec<Vec<Vec<f64>>>>> {
    let s = sentence(caption)?;
    let t = mock_attention(&s, &mock_cfg(mock, seed)?);
    let n = t.len();
    Ok((0..t.layers())
        .map(|l| {
            (0..t.heads())
                .map(|h| t.slice(l, h).chunks(n).map(<[f64]>::to_vec).collect())
                .collect()
        })
        .collect())
}

/// Word-level matrix: attention averaged over layers and heads.
#[pyfunction]
#[pyo3(signature = (caption, seed = 0, mock = None))]
fn aggregate_attention(caption: &str, seed: u64, mock: Option<&str>) -> PyResult<Vec<Vec<f64>>> {
    let s = sentence(caption)?;
    let t = mock_attention(&s, &mock_cfg(mock, seed)?);
    Ok(policy::aggregate_attention(&t, Aggregation::MeanLayersHeads).to_rows())
}

/// Attention each word receives from the others.
#[pyfunction]
#[pyo3(signature = (caption, seed = 0, mock = None))]
fn word_salience(caption: &str, seed: u64, mock: Option<&str>) -> PyResult<Vec<f64>> {
    let rows = aggregate_attention(caption, seed, mock)?;
    let m = semcomm::WordMatrix::from_rows(&rows);
    Ok(policy::word_salience(&m))
}

/// Mock distance between the objective image for `caption` and the image
/// generated from `prompt`.
#[pyfunction]
#[pyo3(signature = (caption, prompt, seed = 0, mock = None))]
fn distance(caption: &str, prompt: &str, seed: u64, mock: Option<&str>) -> PyResult<f64> {
    let cfg = mock_cfg(mock, seed)?;
    let target = mock_target(caption, &cfg).map_err(value_err)?;
    mock_distance(&target, &mock_generate(prompt, &cfg)).map_err(value_err)
}

#[pyfunction]
fn encode_step(word: &str, index: usize) -> PyResult<Cow<'static, [u8]>> {
    metrics::encode_step(word, index)
        .map(Cow::Owned)
        .map_err(value_err)
}

#[pyfunction]
fn decode_step(payload: &[u8]) -> PyResult<(String, usize)> {
    metrics::decode_step(payload).map_err(value_err)
}

/// `(bytes_semantic, bytes_raw, ratio)` over the given JSONL transcripts.
#[pyfunction]
#[pyo3(signature = (transcripts, height = 512, width = 512))]
fn load_report(
    transcripts: Vec<String>,
    height: usize,
    width: usize,
) -> PyResult<(usize, usize, Option<f64>)> {
    let parsed = transcripts
        .iter()
        .map(|t| SessionTranscript::from_jsonl(t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(value_err)?;
    let r = metrics::load_report(&parsed, height, width);
    Ok((r.bytes_semantic, r.bytes_raw, r.ratio))
}

/// One mock session; returns its JSONL transcript.
#[pyfunction]
#[pyo3(signature = (caption, policy = None, threshold = None, seed = 0, session = None, mock = None))]
fn run_session(
    caption: &str,
    policy: Option<&str>,
    threshold: Option<f64>,
    seed: u64,
    session: Option<&str>,
    mock: Option<&str>,
) -> PyResult<String> {
    let s = sentence(caption)?;
    let cfg = mock_cfg(mock, seed)?;
    let session = session_cfg(session, policy, threshold, seed)?;
    let target = mock_target(caption, &cfg).map_err(value_err)?;
    semcomm::run_session(&target, &s, &Ports::mock(cfg), &session)
        .map(|t| t.to_jsonl())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Every policy on the same caption, keyed by policy name.
#[pyfunction]
#[pyo3(signature = (caption, threshold = None, seed = 0, session = None, mock = None))]
fn run_all_policies(
    caption: &str,
    threshold: Option<f64>,
    seed: u64,
    session: Option<&str>,
    mock: Option<&str>,
) -> PyResult<Vec<(String, String)>> {
    let s = sentence(caption)?;
    let cfg = mock_cfg(mock, seed)?;
    let session = session_cfg(session, None, threshold, seed)?;
    let target = mock_target(caption, &cfg).map_err(value_err)?;
    let all = semcomm::run_all_policies(&target, &s, &Ports::mock(cfg), &session)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(all
        .into_iter()
        .map(|(p, t)| (p.name().to_owned(), t.to_jsonl()))
        .collect())
}

#[pymodule]
fn semcomm_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("POLICIES", PolicyKind::NAMES.to_vec())?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(attention, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_attention, m)?)?;
    m.add_function(wrap_pyfunction!(word_salience, m)?)?;
    m.add_function(wrap_pyfunction!(distance, m)?)?;
    m.add_function(wrap_pyfunction!(encode_step, m)?)?;
    m.add_function(wrap_pyfunction!(decode_step, m)?)?;
    m.add_function(wrap_pyfunction!(load_report, m)?)?;
    m.add_function(wrap_pyfunction!(run_session, m)?)?;
    m.add_function(wrap_pyfunction!(run_all_policies, m)?)?;
    Ok(())
}
