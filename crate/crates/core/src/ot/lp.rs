//! Exact transport on small supports by successive shortest paths.
//!
//! The residual graph has source→target arcs of unbounded capacity at cost
//! `C_ij` and target→source arcs carrying the current flow at cost `−C_ij`.
//! Each round sends flow along a cheapest augmenting path from any source with
//! supply left to any target with demand left (Bellman–Ford, since reverse
//! arcs have negative cost). Successive shortest paths never create a negative
//! cycle, so the final flow is optimal.

use ndarray::Array2;

use super::{cost_matrix, Coupling, DiscreteMeasure};
use crate::error::{Error, Result};

/// Largest support accepted on either side.
pub const LP_MAX_SUPPORT: usize = 64;

const EPS: f64 = 1e-15;

/// Optimal coupling and its cost.
pub fn lp_transport(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<(Coupling, f64)> {
    for m in [mu, nu] {
        if m.len() > LP_MAX_SUPPORT {
            return Err(Error::SizeExceeded {
                got: m.len(),
                limit: LP_MAX_SUPPORT,
            });
        }
    }
    let c = cost_matrix(mu, nu);
    let (n, m) = c.dim();
    let mut supply = mu.masses().to_vec();
    let mut demand = nu.masses().to_vec();
    let mut flow = Array2::<f64>::zeros((n, m));
    // Node k < n is source k, node n + j is target j.
    let mut dist = vec![0.0; n + m];
    let mut pred = vec![usize::MAX; n + m];
    let max_rounds = 4 * (n + m) * (n + m) + 16;
    for _ in 0..max_rounds {
        if supply.iter().all(|&s| s <= EPS) || demand.iter().all(|&d| d <= EPS) {
            break;
        }
        dist.fill(f64::INFINITY);
        pred.fill(usize::MAX);
        for i in 0..n {
            if supply[i] > EPS {
                dist[i] = 0.0;
            }
        }
        for _ in 0..n + m {
            let mut changed = false;
            for i in 0..n {
                if dist[i].is_finite() {
                    for j in 0..m {
                        let d = dist[i] + c[[i, j]];
                        if d < dist[n + j] - 1e-15 {
                            dist[n + j] = d;
                            pred[n + j] = i;
                            changed = true;
                        }
                    }
                }
            }
            for j in 0..m {
                if dist[n + j].is_finite() {
                    for i in 0..n {
                        if flow[[i, j]] > EPS {
                            let d = dist[n + j] - c[[i, j]];
                            if d < dist[i] - 1e-15 {
                                dist[i] = d;
                                pred[i] = n + j;
                                changed = true;
                            }
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        let Some(end) = (0..m).filter(|&j| demand[j] > EPS && dist[n + j].is_finite()).min_by(|&a, &b| dist[n + a].total_cmp(&dist[n + b])) else {
            return Err(Error::Invalid("exact transport found no augmenting path".into()));
        };
        // Walk back to the start, collecting the bottleneck.
        let mut amount = demand[end];
        let mut node = n + end;
        let mut path = Vec::new();
        while pred[node] != usize::MAX {
            let p = pred[node];
            path.push((p, node));
            if p >= n {
                amount = amount.min(flow[[node, p - n]]);
            }
            node = p;
        }
        amount = amount.min(supply[node]);
        supply[node] -= amount;
        demand[end] -= amount;
        for (from, to) in path {
            if from < n {
                flow[[from, to - n]] += amount;
            } else {
                flow[[to, from - n]] -= amount;
            }
        }
    }
    flow.mapv_inplace(|v| if v.abs() <= EPS { 0.0 } else { v });
    let cost = (&flow * &c).sum();
    Ok((Coupling::new(mu.clone(), nu.clone(), flow), cost))
}
