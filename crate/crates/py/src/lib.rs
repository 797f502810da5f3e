//! Python bindings: `import soilwave`.

use std::collections::BTreeMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use soilwave_core::energy::{builtin_profiles, lifetime_report};
use soilwave_core::harness::{self, PipelineConfig};
use soilwave_core::lstm::{self, LstmSpec, TrainConfig};
use soilwave_core::preprocess::{self, WindowedDataset};
use soilwave_core::simulator::{self, SimConfig};
use soilwave_core::svr::{self, SvrHyper, SvrTrainOptions};
use soilwave_core::telemetry::{self, RecordSet};

fn err(e: soilwave_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Uplink records, sorted by timestamp then gateway.
#[pyclass(name = "Records", module = "soilwave", frozen)]
struct PyRecords(RecordSet);

#[pymethods]
impl PyRecords {
    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        telemetry::parse_uplink_csv(text).map(PyRecords).map_err(err)
    }

    /// CSV, newline-JSON or binary store, detected from the content.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        telemetry::load_any(path).map(PyRecords).map_err(err)
    }

    fn to_csv(&self) -> String {
        telemetry::write_uplink_csv(&self.0)
    }

    fn gateways(&self) -> Vec<String> {
        self.0.gateways().to_vec()
    }

    /// `(ts, gateway_id, rssi, snr, soil_humidity)` tuples.
    fn rows(&self) -> Vec<(i64, String, f64, f64, Option<f64>)> {
        self.0.records().iter().map(|r| (r.ts, r.gateway_id.clone(), r.rssi, r.snr, r.soil_humidity)).collect()
    }

    /// `(humidity, rssi, snr)` columns of one gateway.
    fn series(&self, gateway: &str) -> (Vec<Option<f64>>, Vec<f64>, Vec<f64>) {
        let mut out = (Vec::new(), Vec::new(), Vec::new());
        for r in self.0.for_gateway(gateway) {
            out.0.push(r.soil_humidity);
            out.1.push(r.rssi);
            out.2.push(r.snr);
        }
        out
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

#[pyfunction]
#[pyo3(signature = (samples=None, seed=42))]
fn simulate(samples: Option<usize>, seed: u64) -> PyResult<PyRecords> {
    let mut cfg = SimConfig { seed, ..SimConfig::default() };
    if let Some(n) = samples {
        cfg.samples = n;
    }
    simulator::simulate(&cfg).map(PyRecords).map_err(err)
}

/// Returns `(long_term, short_term)`.
#[pyfunction]
#[pyo3(signature = (raw, window_len=24))]
fn decompose(raw: Vec<f64>, window_len: usize) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let d = preprocess::decompose_fading(&raw, window_len).map_err(err)?;
    Ok((d.long_term, d.short_term))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    preprocess::pearson(&x, &y).map_err(err)
}

/// Half mean squared error.
#[pyfunction]
fn mse(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    harness::mse(&pred, &target).map_err(err)
}

#[pyfunction]
fn mae(pred: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
    harness::mae(&pred, &target).map_err(err)
}

/// `sensor` or `beacon` preset on the default battery.
#[pyfunction]
#[pyo3(signature = (profile="sensor"))]
fn lifetime(profile: &str) -> PyResult<BTreeMap<String, f64>> {
    let b = builtin_profiles();
    let p = b.profile(profile).ok_or_else(|| PyValueError::new_err(format!("unknown profile `{profile}`")))?;
    let r = lifetime_report(p, &b.battery).map_err(err)?;
    Ok(BTreeMap::from([
        ("avg_current_ma".to_string(), r.avg_current_ma),
        ("lifetime_days".to_string(), r.lifetime_days),
        ("lifetime_years".to_string(), r.lifetime_years),
    ]))
}

type Xy = (Vec<Vec<f64>>, Vec<f64>);

/// Normalized lagged features split chronologically: `((x_train, y_train), (x_test, y_test))`.
#[pyfunction]
#[pyo3(signature = (records, train_fraction=0.8))]
fn svr_dataset(records: &PyRecords, train_fraction: f64) -> PyResult<(Xy, Xy)> {
    let cfg = PipelineConfig { train_fraction, ..PipelineConfig::default() };
    let (train, test) = harness::build_svr_data(&records.0, &cfg).map_err(err)?;
    Ok(((train.features, train.targets), (test.features, test.targets)))
}

type Windows = (Vec<Vec<Vec<f64>>>, Vec<f64>);

fn nest(w: &WindowedDataset) -> Windows {
    let windows =
        w.windows.chunks(w.steps * w.width).map(|win| win.chunks(w.width).map(<[f64]>::to_vec).collect()).collect();
    (windows, w.targets.clone())
}

fn flatten(windows: &[Vec<Vec<f64>>], targets: Vec<f64>) -> PyResult<WindowedDataset> {
    let steps = windows.first().map_or(0, Vec::len);
    let width = windows.first().and_then(|w| w.first()).map_or(0, Vec::len);
    if steps == 0 || width == 0 {
        return Err(PyValueError::new_err("windows must be a non-empty [n][steps][width] nest"));
    }
    let mut flat = Vec::with_capacity(windows.len() * steps * width);
    for win in windows {
        if win.len() != steps || win.iter().any(|row| row.len() != width) {
            return Err(PyValueError::new_err("all windows must share one [steps][width] shape"));
        }
        flat.extend(win.iter().flatten());
    }
    Ok(WindowedDataset { steps, width, windows: flat, targets })
}

/// Sliding windows `(windows, targets)` for train, validation and test.
#[pyfunction]
#[pyo3(signature = (records, steps=18))]
fn lstm_dataset(records: &PyRecords, steps: usize) -> PyResult<(Windows, Option<Windows>, Windows)> {
    let cfg = PipelineConfig { steps, ..PipelineConfig::default() };
    let data = harness::build_lstm_data(&records.0, &cfg).map_err(err)?;
    Ok((nest(&data.train), data.val.as_ref().map(nest), nest(&data.test)))
}

#[pyclass(name = "SvrModel", module = "soilwave", frozen)]
struct PySvrModel(svr::SvrModel);

#[pymethods]
impl PySvrModel {
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        svr::svr_predict_many(&self.0, &x).map_err(err)
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.0.bias
    }

    #[getter]
    fn n_support(&self) -> usize {
        self.0.coeffs.len()
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        svr::SvrModel::from_json(text).map(PySvrModel).map_err(err)
    }
}

#[pyfunction]
#[pyo3(signature = (x, y, c=0.1, epsilon=0.1, gamma=1.0, seed=0))]
fn train_svr(
    py: Python<'_>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    c: f64,
    epsilon: f64,
    gamma: f64,
    seed: u64,
) -> PyResult<PySvrModel> {
    let hyper = SvrHyper { c, epsilon, gamma };
    let opts = SvrTrainOptions { seed, ..SvrTrainOptions::default() };
    let fit = py.detach(|| svr::svr_train(&x, &y, &hyper, &opts)).map_err(err)?;
    Ok(PySvrModel(fit.model))
}

#[pyclass(name = "LstmModel", module = "soilwave", frozen)]
struct PyLstmModel {
    model: lstm::LstmModel,
    history: Vec<(f64, Option<f64>)>,
}

#[pymethods]
impl PyLstmModel {
    fn predict(&self, windows: Vec<Vec<Vec<f64>>>) -> PyResult<Vec<f64>> {
        let n = windows.len();
        let data = flatten(&windows, vec![0.0; n])?;
        lstm::lstm_predict_all(&self.model, &data).map_err(err)
    }

    /// `(train_loss, val_loss)` per epoch.
    #[getter]
    fn history(&self) -> Vec<(f64, Option<f64>)> {
        self.history.clone()
    }

    fn to_json(&self) -> String {
        self.model.to_json(None, None)
    }
}

#[pyfunction]
#[pyo3(signature = (windows, targets, units1=32, units2=32, epochs=100, lr=0.001, batch_size=32, dropout=0.2, seed=42))]
#[allow(clippy::too_many_arguments)]
fn train_lstm(
    py: Python<'_>,
    windows: Vec<Vec<Vec<f64>>>,
    targets: Vec<f64>,
    units1: usize,
    units2: usize,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    dropout: f64,
    seed: u64,
) -> PyResult<PyLstmModel> {
    let data = flatten(&windows, targets)?;
    let spec = LstmSpec { input_width: data.width, units1, units2, dropout_p: dropout };
    let cfg = TrainConfig { lr, epochs, batch_size, seed, ..TrainConfig::default() };
    let (model, hist) = py.detach(|| lstm::train_lstm(&data, None, &spec, &cfg)).map_err(err)?;
    Ok(PyLstmModel { model, history: hist.iter().map(|h| (h.train_loss, h.val_loss)).collect() })
}

#[pymodule]
fn soilwave(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyRecords>()?;
    m.add_class::<PySvrModel>()?;
    m.add_class::<PyLstmModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(lifetime, m)?)?;
    m.add_function(wrap_pyfunction!(svr_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(lstm_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train_svr, m)?)?;
    m.add_function(wrap_pyfunction!(train_lstm, m)?)?;
    Ok(())
}
