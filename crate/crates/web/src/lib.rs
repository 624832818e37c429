//! Browser bindings: draw a two-graph synthetic instance, fit it with one of
//! the factorization methods and compare the learned sample graph with the
//! true one. Every call returns JSON.

use nalgebra::DMatrix;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use lgmd::harness::{fit_method, EstimatedGraph, ExperimentConfig, Method};
use lgmd::metrics::{rmse, subspace_angle};
use lgmd::model::PrecisionGraph;
use lgmd::synth::{gen_instance, SyntheticInstance};

#[derive(Serialize)]
struct Heatmap {
    rows: usize,
    cols: usize,
    /// Row-major.
    values: Vec<f64>,
}

impl From<&DMatrix<f64>> for Heatmap {
    fn from(m: &DMatrix<f64>) -> Self {
        Heatmap { rows: m.nrows(), cols: m.ncols(), values: m.transpose().as_slice().to_vec() }
    }
}

type Edge = (usize, usize, f64);

fn precision_edges(g: &PrecisionGraph) -> Vec<Edge> {
    g.support().iter().map(|&(i, j)| (i, j, g.theta()[(i, j)])).collect()
}

fn estimated_edges(g: &EstimatedGraph) -> Vec<Edge> {
    match g {
        EstimatedGraph::Precision(p) => precision_edges(p),
        EstimatedGraph::Laplacian(l) => l.weights().iter().map(|(&(i, j), &w)| (i, j, -w)).collect(),
    }
}

#[derive(Serialize)]
struct Truth {
    noisy: Heatmap,
    clean: Heatmap,
    sigma_n: f64,
    sample_edges: Vec<Edge>,
    feature_edges: Vec<Edge>,
}

#[derive(Serialize)]
struct FitView {
    method: &'static str,
    reconstruction: Heatmap,
    /// RMSE against the clean matrix.
    e2: f64,
    e5: Option<f64>,
    e6: Option<f64>,
    /// Learned edges that are true edges, sample side.
    e7: usize,
    sample_edges: Vec<Edge>,
    feature_edge_count: usize,
}

#[wasm_bindgen]
pub struct Demo {
    inst: SyntheticInstance,
    rank: usize,
}

impl Demo {
    pub fn create(n: usize, p: usize, rank: usize, noise_ratio: f64, edge_fraction: f64, seed: u32) -> lgmd::Result<Demo> {
        let inst = gen_instance(n, p, rank, noise_ratio, edge_fraction, u64::from(seed))?;
        Ok(Demo { inst, rank })
    }

    pub fn truth_json(&self) -> String {
        let t = Truth {
            noisy: self.inst.y_no.values().into(),
            clean: self.inst.y_gt.values().into(),
            sigma_n: self.inst.sigma_n,
            sample_edges: precision_edges(&self.inst.a_gt),
            feature_edges: precision_edges(&self.inst.b_gt),
        };
        serde_json::to_string(&t).expect("plain data serializes")
    }

    pub fn fit_json(&self, method: &str, lambda1: f64, lambda2: f64, eta: f64) -> lgmd::Result<String> {
        let method: Method = method.parse()?;
        let cfg = ExperimentConfig { rank: self.rank, eta1: eta, eta2: eta, ..ExperimentConfig::default() };
        let h = cfg.solver_hyperparams(lambda1, lambda2);
        h.validate()?;
        let fit = fit_method(method, &self.inst.y_no, &h, cfg.knn_neighbors)?;
        let truth: std::collections::BTreeSet<(usize, usize)> = self.inst.a_gt.support().clone();
        let sample_edges = fit.sample_graph.as_ref().map(estimated_edges).unwrap_or_default();
        let view = FitView {
            method: method.name(),
            e2: rmse(self.inst.y_gt.values(), &fit.recon)?,
            e5: subspace_angle(&self.inst.x_gt, &fit.x).ok(),
            e6: subspace_angle(&self.inst.w_gt, &fit.w).ok(),
            e7: sample_edges.iter().filter(|e| truth.contains(&(e.0, e.1))).count(),
            reconstruction: (&fit.recon).into(),
            feature_edge_count: fit.feature_graph.as_ref().map_or(0, |g| g.edge_count()),
            sample_edges,
        };
        Ok(serde_json::to_string(&view)?)
    }
}

fn js(e: lgmd::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
impl Demo {
    /// Draws a fresh instance.
    #[wasm_bindgen(constructor)]
    pub fn new(n: usize, p: usize, rank: usize, noise_ratio: f64, edge_fraction: f64, seed: u32) -> Result<Demo, JsError> {
        Demo::create(n, p, rank, noise_ratio, edge_fraction, seed).map_err(js)
    }

    /// Noisy and clean matrices with the true edge lists.
    pub fn truth(&self) -> String {
        self.truth_json()
    }

    /// `method` is one of pca, pmf, dgrmd, lgmd, lgmd_plus.
    pub fn fit(&self, method: &str, lambda1: f64, lambda2: f64, eta: f64) -> Result<String, JsError> {
        self.fit_json(method, lambda1, lambda2, eta).map_err(js)
    }
}
