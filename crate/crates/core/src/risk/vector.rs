use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five scored facets of an investor profile, in feature order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RiskDimension {
    RiskAppetite,
    ReturnExpectation,
    VolatilityTolerance,
    Horizon,
    LiquidityPreference,
}

impl RiskDimension {
    pub const ALL: [RiskDimension; 5] = [
        RiskDimension::RiskAppetite,
        RiskDimension::ReturnExpectation,
        RiskDimension::VolatilityTolerance,
        RiskDimension::Horizon,
        RiskDimension::LiquidityPreference,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RiskDimension::RiskAppetite => "risk_appetite",
            RiskDimension::ReturnExpectation => "return_expectation",
            RiskDimension::VolatilityTolerance => "volatility_tolerance",
            RiskDimension::Horizon => "horizon",
            RiskDimension::LiquidityPreference => "liquidity_preference",
        }
    }
}

/// Bounded investor profile; every component lies in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RiskVector {
    pub risk_appetite: f64,
    pub return_expectation: f64,
    pub volatility_tolerance: f64,
    pub horizon: f64,
    pub liquidity_preference: f64,
}

impl Default for RiskVector {
    fn default() -> Self {
        Self::neutral()
    }
}

impl RiskVector {
    pub const DIM: usize = 5;

    /// The uninformative profile, 0.5 everywhere.
    pub fn neutral() -> Self {
        Self::from_array_unchecked([0.5; 5])
    }

    pub fn new(values: [f64; 5]) -> Result<Self> {
        for (dim, v) in RiskDimension::ALL.iter().zip(values) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Input(format!(
                    "{} = {v} lies outside [0, 1]",
                    dim.name()
                )));
            }
        }
        Ok(Self::from_array_unchecked(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; 5] = values.try_into().map_err(|_| Error::Dimension {
            context: "risk vector",
            expected: 5,
            actual: values.len(),
        })?;
        Self::new(arr)
    }

    /// A neutral profile with the given risk appetite.
    pub fn with_appetite(appetite: f64) -> Self {
        let mut r = Self::neutral();
        r.risk_appetite = appetite.clamp(0.0, 1.0);
        r
    }

    pub(crate) fn from_array_unchecked(v: [f64; 5]) -> Self {
        Self {
            risk_appetite: v[0],
            return_expectation: v[1],
            volatility_tolerance: v[2],
            horizon: v[3],
            liquidity_preference: v[4],
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [
            self.risk_appetite,
            self.return_expectation,
            self.volatility_tolerance,
            self.horizon,
            self.liquidity_preference,
        ]
    }

    pub fn get(&self, dim: RiskDimension) -> f64 {
        self.to_array()[dim.index()]
    }

    pub fn set(&mut self, dim: RiskDimension, value: f64) {
        let mut arr = self.to_array();
        arr[dim.index()] = value;
        *self = Self::from_array_unchecked(arr);
    }

    pub fn is_bounded(&self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range() {
        assert!(RiskVector::new([0.5, 0.5, 1.2, 0.5, 0.5]).is_err());
        assert!(RiskVector::from_slice(&[0.5; 4]).is_err());
        assert!(RiskVector::new([0.0, 1.0, 0.5, 0.5, 0.5]).is_ok());
    }

    #[test]
    fn get_set_roundtrip_by_dimension() {
        let mut r = RiskVector::neutral();
        r.set(RiskDimension::Horizon, 0.9);
        assert_eq!(r.horizon, 0.9);
        assert_eq!(r.get(RiskDimension::Horizon), 0.9);
        assert_eq!(RiskDimension::LiquidityPreference.index(), 4);
    }
}
