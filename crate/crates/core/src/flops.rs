//! Multiply-add accounting per named scope, plus the scaling-report types.
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::ops::{Add, AddAssign};

/// Counted work: multiply-adds and elementwise ops (activations, comparisons,
/// additions) are kept apart.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FlopCount {
    pub macs: u64,
    pub elementwise: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.macs + self.elementwise
    }
}

impl Add for FlopCount {
    type Output = FlopCount;
    fn add(self, o: FlopCount) -> FlopCount {
        FlopCount {
            macs: self.macs + o.macs,
            elementwise: self.elementwise + o.elementwise,
        }
    }
}

impl AddAssign for FlopCount {
    fn add_assign(&mut self, o: FlopCount) {
        *self = *self + o;
    }
}

/// Scope paths are `/`-joined, e.g. `encoder/stage2/interaction`.
#[derive(Clone, Debug, Default)]
pub struct FlopCounter {
    scopes: BTreeMap<String, FlopCount>,
}

impl FlopCounter {
    pub fn record(&mut self, scope: &str, count: FlopCount) {
        *self.scopes.entry(String::from(scope)).or_default() += count;
    }

    pub fn reset(&mut self) {
        self.scopes.clear();
    }

    pub fn get(&self, scope: &str) -> FlopCount {
        self.scopes.get(scope).copied().unwrap_or_default()
    }

    pub fn total(&self) -> FlopCount {
        self.scopes.values().fold(FlopCount::default(), |a, &b| a + b)
    }

    /// Sum over every scope whose path contains `segment` as a component.
    pub fn segment_total(&self, segment: &str) -> FlopCount {
        self.scopes
            .iter()
            .filter(|(k, _)| k.split('/').any(|s| s == segment))
            .fold(FlopCount::default(), |a, (_, &b)| a + b)
    }

    /// Sum over scopes under `prefix` (the scope itself and its children).
    pub fn prefix_total(&self, prefix: &str) -> FlopCount {
        self.scopes
            .iter()
            .filter(|(k, _)| {
                k.as_str() == prefix
                    || (k.starts_with(prefix) && k.as_bytes().get(prefix.len()) == Some(&b'/'))
            })
            .fold(FlopCount::default(), |a, (_, &b)| a + b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, FlopCount)> {
        self.scopes.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn merge(&mut self, other: &FlopCounter) {
        for (k, v) in other.iter() {
            self.record(k, v);
        }
    }
}

/// One grid size in a scaling sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    /// Spatial tokens `H·W`.
    pub n: u64,
    /// Work in the scaling scope (interaction for fusion, attention core for xattn).
    pub flops: u64,
    /// All work counted during the run, projections and global maps included.
    pub total_flops: u64,
    pub wall_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlopReport {
    pub module: String,
    pub points: Vec<SweepPoint>,
    /// Least-squares slope of `ln flops` against `ln n`.
    pub slope: f64,
    pub total_slope: f64,
}

impl FlopReport {
    pub fn new(module: &str, points: Vec<SweepPoint>) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.flops as f64).collect();
        let ts: Vec<f64> = points.iter().map(|p| p.total_flops as f64).collect();
        Self {
            module: String::from(module),
            slope: loglog_slope(&xs, &ys),
            total_slope: loglog_slope(&xs, &ts),
            points,
        }
    }
}

/// Ordinary least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|&x| libm::log(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| libm::log(y)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counters_are_additive_and_resettable() {
        let mut c = FlopCounter::default();
        c.record("a/interaction", FlopCount { macs: 3, elementwise: 1 });
        c.record("b", FlopCount { macs: 2, elementwise: 0 });
        c.record("a/interaction", FlopCount { macs: 1, elementwise: 1 });
        assert_eq!(c.get("a/interaction"), FlopCount { macs: 4, elementwise: 2 });
        assert_eq!(c.total().total(), 8);
        assert_eq!(c.segment_total("interaction").macs, 4);
        assert_eq!(c.prefix_total("a").macs, 4);
        c.reset();
        assert_eq!(c.total(), FlopCount::default());
    }

    #[test]
    fn slope_of_power_law() {
        let xs = [1.0, 2.0, 4.0, 8.0];
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
        assert!((loglog_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
