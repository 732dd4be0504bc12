//! Bucket-occupancy statistics and morphological locality of a hasher.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::hashing::{BitVector, HashScheme, TokenHasher, DIGEST_BITS};

/// Significance level used for the reported critical value.
pub const UNIFORMITY_ALPHA: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollisionReport {
    pub tool_version: String,
    pub scheme: HashScheme,
    pub n_tokens: u64,
    pub n_buckets: u64,
    pub load_factor: f64,
    pub occupied_buckets: u64,
    pub bucket_histogram: Vec<u64>,
    /// Pearson statistic against the uniform distribution over buckets.
    pub chi_square: f64,
    pub degrees_of_freedom: u64,
    /// Upper-tail probability; `None` with a single bucket.
    pub p_value: Option<f64>,
    /// Critical value at [`UNIFORMITY_ALPHA`]; `None` with a single bucket.
    pub critical_value: Option<f64>,
    pub family_locality: Option<FamilyLocality>,
}

/// Within-family vs cross-family agreement of hash outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyLocality {
    pub n_families: usize,
    pub within_pairs: usize,
    pub cross_pairs: usize,
    /// Fraction of pairs landing in the same bucket.
    pub within_bucket_agreement: f64,
    pub cross_bucket_agreement: f64,
    /// Mean fraction of equal bits, for schemes that produce bits.
    pub within_hamming_similarity: Option<f64>,
    pub cross_hamming_similarity: Option<f64>,
    /// Hamming-similarity margin (within minus cross) when bits are
    /// available, otherwise the bucket-agreement margin.
    pub margin: f64,
}

/// Pearson chi-square statistic of `histogram` against a uniform expectation.
pub fn chi_square_uniform(histogram: &[u64]) -> f64 {
    let n: u64 = histogram.iter().sum();
    if histogram.len() <= 1 || n == 0 {
        return 0.0;
    }
    let expected = n as f64 / histogram.len() as f64;
    histogram
        .iter()
        .map(|&o| {
            let diff = o as f64 - expected;
            diff * diff / expected
        })
        .sum()
}

/// Upper critical value of the chi-square distribution.
pub fn chi_square_critical(degrees_of_freedom: u64, alpha: f64) -> Result<f64> {
    let dist = ChiSquared::new(degrees_of_freedom as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.inverse_cdf(1.0 - alpha))
}

fn chi_square_p_value(stat: f64, degrees_of_freedom: u64) -> Result<f64> {
    let dist = ChiSquared::new(degrees_of_freedom as f64)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(dist.sf(stat))
}

/// Bits used for Hamming comparisons: the full digest for MD5, the sign bits
/// for sign-LSH, nothing for argmax-LSH.
fn comparison_bits(hasher: &TokenHasher, token: &str) -> Result<Option<BitVector>> {
    match hasher {
        TokenHasher::Md5 { .. } => hasher.bits(token, DIGEST_BITS).map(Some),
        TokenHasher::LshSign { hasher: h, .. } => hasher.bits(token, h.n_bits()).map(Some),
        TokenHasher::LshArgmax { .. } => Ok(None),
    }
}

/// Parses a family file: one family per line, members separated by
/// whitespace. Blank lines are skipped.
pub fn parse_families(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split_whitespace().map(str::to_owned).collect::<Vec<_>>())
        .filter(|f| !f.is_empty())
        .collect()
}

/// Compares every within-family pair against every cross-family pair.
pub fn family_locality(
    hasher: &TokenHasher,
    families: &[Vec<String>],
    n_buckets: u64,
) -> Result<FamilyLocality> {
    struct Member {
        family: usize,
        bucket: u64,
        bits: Option<BitVector>,
    }
    let members: Vec<Member> = families
        .iter()
        .enumerate()
        .flat_map(|(f, fam)| fam.iter().map(move |t| (f, t)))
        .map(|(family, t)| {
            Ok(Member {
                family,
                bucket: hasher.index(t, n_buckets)?,
                bits: comparison_bits(hasher, t)?,
            })
        })
        .collect::<Result<_>>()?;

    let mut within = (0usize, 0usize, 0.0f64);
    let mut cross = (0usize, 0usize, 0.0f64);
    for (i, a) in members.iter().enumerate() {
        for b in &members[i + 1..] {
            let acc = if a.family == b.family {
                &mut within
            } else {
                &mut cross
            };
            acc.0 += 1;
            acc.1 += (a.bucket == b.bucket) as usize;
            if let (Some(x), Some(y)) = (&a.bits, &b.bits) {
                acc.2 += x.hamming_similarity(y)?;
            }
        }
    }
    if within.0 == 0 || cross.0 == 0 {
        return Err(Error::InvalidArgument(
            "locality needs at least two families with two members".into(),
        ));
    }
    let has_bits = members.iter().all(|m| m.bits.is_some());
    let mean = |acc: (usize, usize, f64)| (acc.1 as f64 / acc.0 as f64, acc.2 / acc.0 as f64);
    let (wb, wh) = mean(within);
    let (cb, ch) = mean(cross);
    Ok(FamilyLocality {
        n_families: families.len(),
        within_pairs: within.0,
        cross_pairs: cross.0,
        within_bucket_agreement: wb,
        cross_bucket_agreement: cb,
        within_hamming_similarity: has_bits.then_some(wh),
        cross_hamming_similarity: has_bits.then_some(ch),
        margin: if has_bits { wh - ch } else { wb - cb },
    })
}

/// Hashes every token, histograms the buckets, and tests uniformity.
pub fn collision_analyze<S: AsRef<str> + Sync>(
    tokens: &[S],
    hasher: &TokenHasher,
    n_buckets: u64,
    families: Option<&[Vec<String>]>,
) -> Result<CollisionReport> {
    if n_buckets == 0 {
        return Err(Error::ZeroBuckets);
    }
    if tokens.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let histogram = tokens
        .par_iter()
        .fold(
            || vec![0u64; n_buckets as usize],
            |mut h, t| {
                if let Ok(i) = hasher.index(t.as_ref(), n_buckets) {
                    h[i as usize] += 1;
                }
                h
            },
        )
        .reduce(
            || vec![0u64; n_buckets as usize],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let hashed: u64 = histogram.iter().sum();
    if hashed != tokens.len() as u64 {
        // surface the first failure
        for t in tokens {
            hasher.index(t.as_ref(), n_buckets)?;
        }
    }
    let chi_square = chi_square_uniform(&histogram);
    let dof = n_buckets - 1;
    let (p_value, critical_value) = if dof > 0 {
        (
            Some(chi_square_p_value(chi_square, dof)?),
            Some(chi_square_critical(dof, UNIFORMITY_ALPHA)?),
        )
    } else {
        (None, None)
    };
    let family_locality = families
        .map(|f| family_locality(hasher, f, n_buckets))
        .transpose()?;
    Ok(CollisionReport {
        tool_version: crate::metrics::TOOL_VERSION.into(),
        scheme: hasher.scheme(),
        n_tokens: tokens.len() as u64,
        n_buckets,
        load_factor: tokens.len() as f64 / n_buckets as f64,
        occupied_buckets: histogram.iter().filter(|&&c| c > 0).count() as u64,
        bucket_histogram: histogram,
        chi_square,
        degrees_of_freedom: dof,
        p_value,
        critical_value,
        family_locality,
    })
}
