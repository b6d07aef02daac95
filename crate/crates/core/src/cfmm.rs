//! Swap functions of constant-function market makers.
//!
//! Outputs are exact: every product is formed at 512 bits and narrowed back to
//! 256 bits only once the result is known to fit. Marginal prices are doubles;
//! callers only compare and difference them.

use serde::{Deserialize, Serialize};

use crate::amount::{narrow, Amount, U256, U512};
use crate::error::{MathError, SwapError};

/// Fee denominator: fees are expressed in basis points.
pub const FEE_DENOMINATOR: u64 = 10_000;

/// Upper bound on the number of liquidity segments of one direction.
pub const MAX_SEGMENTS: usize = 16;

/// Uniswap-V2 style pool viewed from one swap direction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstantProduct {
    pub reserve_in: Amount,
    pub reserve_out: Amount,
    pub fee_bps: u16,
}

/// A price range of concentrated liquidity, traded as a constant-product
/// curve over virtual reserves until `capacity_in` input has been consumed.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub capacity_in: Amount,
    pub virtual_reserve_in: Amount,
    pub virtual_reserve_out: Amount,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PiecewiseLiquidity {
    pub segments: Vec<Segment>,
    pub fee_bps: u16,
}

/// Concave, increasing map from an input amount to an output amount.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SwapFunction {
    ConstantProduct(ConstantProduct),
    PiecewiseLiquidity(PiecewiseLiquidity),
}

fn check_fee(fee_bps: u16) -> Result<(), SwapError> {
    if u64::from(fee_bps) >= FEE_DENOMINATOR {
        return Err(SwapError::Invalid(format!("fee {fee_bps} bps must be below 10000")));
    }
    Ok(())
}

/// `floor(x·γ·r_out / (r_in·10⁴ + x·γ))` with `γ = 10⁴ − fee`.
fn cp_out(r_in: Amount, r_out: Amount, fee_bps: u16, x: Amount) -> Result<Amount, MathError> {
    if x.is_zero() {
        return Ok(Amount::ZERO);
    }
    let gamma = U256::from(FEE_DENOMINATOR - u64::from(fee_bps));
    let x_fee: U512 = x.raw().widening_mul(gamma);
    let numerator = x_fee
        .checked_mul(U512::from(r_out.raw()))
        .ok_or(MathError::Overflow)?;
    let scaled_in: U512 = r_in.raw().widening_mul(U256::from(FEE_DENOMINATOR));
    let denominator = scaled_in.checked_add(x_fee).ok_or(MathError::Overflow)?;
    narrow(numerator / denominator)
}

/// `γ·r_in·r_out / (r_in + γ·x)²` evaluated through ratios so that
/// reserves far beyond 2^53 keep full double precision.
fn cp_marginal(r_in: Amount, r_out: Amount, fee_bps: u16, x: Amount) -> f64 {
    let gamma = (FEE_DENOMINATOR - u64::from(fee_bps)) as f64 / FEE_DENOMINATOR as f64;
    let spot = r_out.ratio(r_in);
    let growth = 1.0 + gamma * x.ratio(r_in);
    gamma * spot / (growth * growth)
}

impl ConstantProduct {
    pub fn new(reserve_in: Amount, reserve_out: Amount, fee_bps: u16) -> Result<Self, SwapError> {
        if reserve_in.is_zero() || reserve_out.is_zero() {
            return Err(SwapError::Invalid("reserves must be positive".into()));
        }
        check_fee(fee_bps)?;
        Ok(Self { reserve_in, reserve_out, fee_bps })
    }
}

impl Segment {
    fn spot(&self) -> f64 {
        self.virtual_reserve_out.ratio(self.virtual_reserve_in)
    }
}

impl PiecewiseLiquidity {
    /// Validates segment ordering: spot prices must strictly decrease from
    /// one segment to the next.
    pub fn new(segments: Vec<Segment>, fee_bps: u16) -> Result<Self, SwapError> {
        check_fee(fee_bps)?;
        if segments.is_empty() || segments.len() > MAX_SEGMENTS {
            return Err(SwapError::Invalid(format!(
                "expected 1..={MAX_SEGMENTS} segments, got {}",
                segments.len()
            )));
        }
        for s in &segments {
            if s.capacity_in.is_zero() || s.virtual_reserve_in.is_zero() || s.virtual_reserve_out.is_zero() {
                return Err(SwapError::Invalid("segment fields must be positive".into()));
            }
        }
        for pair in segments.windows(2) {
            // out_a / in_a > out_b / in_b, cross-multiplied exactly.
            let lhs: U512 = pair[0].virtual_reserve_out.raw().widening_mul(pair[1].virtual_reserve_in.raw());
            let rhs: U512 = pair[1].virtual_reserve_out.raw().widening_mul(pair[0].virtual_reserve_in.raw());
            if lhs <= rhs {
                return Err(SwapError::Invalid(
                    "segments must have strictly decreasing spot prices".into(),
                ));
            }
        }
        Ok(Self { segments, fee_bps })
    }

    pub fn capacity(&self) -> Amount {
        self.segments.iter().map(|s| s.capacity_in).sum()
    }

    fn check_capacity(&self, x: Amount) -> Result<(), SwapError> {
        let capacity = self.capacity();
        if x > capacity {
            return Err(SwapError::CapacityExceeded { input: x, capacity });
        }
        Ok(())
    }
}

impl SwapFunction {
    pub fn constant_product(reserve_in: Amount, reserve_out: Amount, fee_bps: u16) -> Result<Self, SwapError> {
        ConstantProduct::new(reserve_in, reserve_out, fee_bps).map(SwapFunction::ConstantProduct)
    }

    pub fn piecewise(segments: Vec<Segment>, fee_bps: u16) -> Result<Self, SwapError> {
        PiecewiseLiquidity::new(segments, fee_bps).map(SwapFunction::PiecewiseLiquidity)
    }

    pub fn fee_bps(&self) -> u16 {
        match self {
            SwapFunction::ConstantProduct(cp) => cp.fee_bps,
            SwapFunction::PiecewiseLiquidity(pw) => pw.fee_bps,
        }
    }

    /// Largest admissible input, if bounded.
    pub fn capacity(&self) -> Option<Amount> {
        match self {
            SwapFunction::ConstantProduct(_) => None,
            SwapFunction::PiecewiseLiquidity(pw) => Some(pw.capacity()),
        }
    }

    /// Exact output for input `x`.
    pub fn swap_out(&self, x: Amount) -> Result<Amount, SwapError> {
        match self {
            SwapFunction::ConstantProduct(cp) => Ok(cp_out(cp.reserve_in, cp.reserve_out, cp.fee_bps, x)?),
            SwapFunction::PiecewiseLiquidity(pw) => {
                pw.check_capacity(x)?;
                let mut remaining = x;
                let mut out = Amount::ZERO;
                for seg in &pw.segments {
                    if remaining.is_zero() {
                        break;
                    }
                    let used = remaining.min(seg.capacity_in);
                    out = out.checked_add(cp_out(
                        seg.virtual_reserve_in,
                        seg.virtual_reserve_out,
                        pw.fee_bps,
                        used,
                    )?)?;
                    remaining = remaining.checked_sub(used)?;
                }
                Ok(out)
            }
        }
    }

    /// Analytic derivative of the output at input `x`.
    pub fn marginal_price(&self, x: Amount) -> Result<f64, SwapError> {
        match self {
            SwapFunction::ConstantProduct(cp) => Ok(cp_marginal(cp.reserve_in, cp.reserve_out, cp.fee_bps, x)),
            SwapFunction::PiecewiseLiquidity(pw) => {
                pw.check_capacity(x)?;
                let mut offset = x;
                let last = pw.segments.len().saturating_sub(1);
                for (i, seg) in pw.segments.iter().enumerate() {
                    if offset < seg.capacity_in || i == last {
                        return Ok(cp_marginal(
                            seg.virtual_reserve_in,
                            seg.virtual_reserve_out,
                            pw.fee_bps,
                            offset.min(seg.capacity_in),
                        ));
                    }
                    offset = offset.checked_sub(seg.capacity_in)?;
                }
                // Drained liquidity: nothing more comes out.
                Ok(0.0)
            }
        }
    }

    /// Marginal price at zero input.
    pub fn spot_price(&self) -> f64 {
        self.marginal_price(Amount::ZERO).unwrap_or(0.0)
    }

    /// Output asymptote (constant product) or output at full capacity.
    pub fn max_output(&self) -> Amount {
        match self {
            SwapFunction::ConstantProduct(cp) => cp.reserve_out,
            SwapFunction::PiecewiseLiquidity(pw) => pw
                .segments
                .iter()
                .map(|s| {
                    cp_out(s.virtual_reserve_in, s.virtual_reserve_out, pw.fee_bps, s.capacity_in)
                        .unwrap_or(s.virtual_reserve_out)
                })
                .sum(),
        }
    }

    /// The swap function this direction presents after `x` has been sold
    /// into it. The fee stays in the pool, as on-chain.
    pub fn after_swap(&self, x: Amount) -> Result<SwapFunction, SwapError> {
        match self {
            SwapFunction::ConstantProduct(cp) => {
                let out = cp_out(cp.reserve_in, cp.reserve_out, cp.fee_bps, x)?;
                let reserve_out = cp.reserve_out.checked_sub(out)?;
                if reserve_out.is_zero() {
                    return Err(SwapError::Invalid("pool drained".into()));
                }
                Ok(SwapFunction::ConstantProduct(ConstantProduct {
                    reserve_in: cp.reserve_in.checked_add(x)?,
                    reserve_out,
                    fee_bps: cp.fee_bps,
                }))
            }
            SwapFunction::PiecewiseLiquidity(pw) => {
                pw.check_capacity(x)?;
                let mut remaining = x;
                let mut segments = Vec::with_capacity(pw.segments.len());
                for seg in &pw.segments {
                    if remaining >= seg.capacity_in {
                        remaining = remaining.checked_sub(seg.capacity_in)?;
                        continue;
                    }
                    let out = cp_out(seg.virtual_reserve_in, seg.virtual_reserve_out, pw.fee_bps, remaining)?;
                    segments.push(Segment {
                        capacity_in: seg.capacity_in.checked_sub(remaining)?,
                        virtual_reserve_in: seg.virtual_reserve_in.checked_add(remaining)?,
                        virtual_reserve_out: seg.virtual_reserve_out.checked_sub(out)?,
                    });
                    remaining = Amount::ZERO;
                }
                // Consumed segments may leave an empty list; it behaves as a
                // zero-capacity function.
                Ok(SwapFunction::PiecewiseLiquidity(PiecewiseLiquidity {
                    segments,
                    fee_bps: pw.fee_bps,
                }))
            }
        }
    }

    /// Marginal price of the first segment or the pool, used for ranking.
    pub fn first_segment_spot(&self) -> f64 {
        match self {
            SwapFunction::ConstantProduct(cp) => cp.reserve_out.ratio(cp.reserve_in),
            SwapFunction::PiecewiseLiquidity(pw) => pw.segments.first().map_or(0.0, Segment::spot),
        }
    }
}
