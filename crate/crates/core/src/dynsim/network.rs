//! Bus-level network data and Kron reduction to the generator internal nodes.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A π-model branch; `charging` is the total line charging susceptance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub charging: f64,
}

/// Constant-impedance load, converted from `P + jQ` drawn at voltage `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Load {
    pub bus: usize,
    pub p: f64,
    pub q: f64,
    pub v: f64,
}

/// Buses are numbered from 0. Generator `i` sits behind transient reactance
/// `xd[i]` at terminal bus `terminals[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub buses: usize,
    pub branches: Vec<Branch>,
    pub loads: Vec<Load>,
    pub terminals: Vec<usize>,
    pub xd: Vec<f64>,
}

impl Network {
    /// Admittance matrix over the internal nodes (first) and the buses.
    pub fn augmented_admittance(&self, out_of_service: &[usize]) -> Result<DMatrix<Complex64>> {
        let g = self.terminals.len();
        if self.xd.len() != g {
            return Err(Error::Config("one transient reactance per generator expected".into()));
        }
        let n = g + self.buses;
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        let mut add_series = |a: usize, b: usize, ys: Complex64| {
            y[(a, a)] += ys;
            y[(b, b)] += ys;
            y[(a, b)] -= ys;
            y[(b, a)] -= ys;
        };
        for (k, br) in self.branches.iter().enumerate() {
            if out_of_service.contains(&k) {
                continue;
            }
            if br.from >= self.buses || br.to >= self.buses || br.from == br.to {
                return Err(Error::Config(format!("branch {k} has invalid endpoints")));
            }
            add_series(g + br.from, g + br.to, Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x));
        }
        for (i, (&t, &x)) in self.terminals.iter().zip(&self.xd).enumerate() {
            if t >= self.buses || x <= 0.0 {
                return Err(Error::Config(format!("generator {i} has an invalid terminal or reactance")));
            }
            add_series(i, g + t, Complex64::new(0.0, -1.0 / x));
        }
        for (k, br) in self.branches.iter().enumerate() {
            if !out_of_service.contains(&k) {
                let half = Complex64::new(0.0, br.charging / 2.0);
                y[(g + br.from, g + br.from)] += half;
                y[(g + br.to, g + br.to)] += half;
            }
        }
        for l in &self.loads {
            if l.bus >= self.buses || l.v <= 0.0 {
                return Err(Error::Config("load on an invalid bus".into()));
            }
            y[(g + l.bus, g + l.bus)] += Complex64::new(l.p, -l.q) / (l.v * l.v);
        }
        Ok(y)
    }

    /// Kron-reduced admittance `Y_gg − Y_gb Y_bb⁻¹ Y_bg` with the listed branches removed.
    pub fn reduce(&self, out_of_service: &[usize]) -> Result<DMatrix<Complex64>> {
        let y = self.augmented_admittance(out_of_service)?;
        let g = self.terminals.len();
        let n = y.nrows();
        let ygg = y.view((0, 0), (g, g)).into_owned();
        let ygb = y.view((0, g), (g, n - g)).into_owned();
        let ybg = y.view((g, 0), (n - g, g)).into_owned();
        let ybb = y.view((g, g), (n - g, n - g)).into_owned();
        let sol = ybb
            .lu()
            .solve(&ybg)
            .ok_or_else(|| Error::Config("bus admittance block is singular (islanded network?)".into()))?;
        Ok(ygg - ygb * sol)
    }
}

/// Nine-bus, three-machine test network with the 5–7 and 6–9 corridors
/// built as double circuits, so that tripping one circuit of each keeps the
/// network connected. Per-unit on a 100 MVA base.
pub fn nine_bus() -> Network {
    let line = |from: usize, to: usize, r: f64, x: f64, charging: f64| Branch { from: from - 1, to: to - 1, r, x, charging };
    Network {
        buses: 9,
        branches: vec![
            line(1, 4, 0.0, 0.0576, 0.0),
            line(2, 7, 0.0, 0.0625, 0.0),
            line(3, 9, 0.0, 0.0586, 0.0),
            line(4, 5, 0.010, 0.085, 0.176),
            line(4, 6, 0.017, 0.092, 0.158),
            // double circuit 5–7: each circuit carries twice the series impedance
            line(5, 7, 0.064, 0.322, 0.153),
            line(5, 7, 0.064, 0.322, 0.153),
            // double circuit 6–9
            line(6, 9, 0.078, 0.340, 0.179),
            line(6, 9, 0.078, 0.340, 0.179),
            line(7, 8, 0.0085, 0.072, 0.149),
            line(8, 9, 0.0119, 0.1008, 0.209),
        ],
        loads: vec![
            Load { bus: 4, p: 1.25, q: 0.50, v: 0.9956 },
            Load { bus: 5, p: 0.90, q: 0.30, v: 1.0127 },
            Load { bus: 7, p: 1.00, q: 0.35, v: 1.0159 },
        ],
        terminals: vec![0, 1, 2],
        xd: vec![0.0608, 0.1198, 0.1813],
    }
}

/// Branch indices of [`nine_bus`] tripped by the first and second event.
pub const NINE_BUS_TRIPS: [usize; 2] = [5, 7];
