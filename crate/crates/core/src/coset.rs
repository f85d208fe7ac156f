//! Coset coding over learned clusters.
//!
//! A secure message selects a coset of symbols and the transmitted symbol is
//! drawn uniformly from that coset. Two layouts are supported:
//!
//! * [`CosetLayout::AcrossClusters`] (default): coset `k` holds the `k`-th
//!   member of every cluster, so the random draw picks the cluster. An
//!   eavesdropper who can only resolve clusters learns nothing about the
//!   message, while a receiver resolving individual symbols recovers it.
//! * [`CosetLayout::WithinCluster`]: coset `j` is cluster `j` itself, so the
//!   message is the cluster label and the draw picks a member.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterAssignment;
use crate::error::{Result, WiretapError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CosetLayout {
    #[default]
    AcrossClusters,
    WithinCluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosetCode {
    layout: CosetLayout,
    cosets: Vec<Vec<usize>>,
    symbol_to_message: Vec<usize>,
}

impl CosetCode {
    pub fn new(assignment: &ClusterAssignment, layout: CosetLayout) -> Self {
        let members = assignment.members();
        let cosets: Vec<Vec<usize>> = match layout {
            CosetLayout::WithinCluster => members,
            CosetLayout::AcrossClusters => (0..assignment.cluster_size())
                .map(|rank| members.iter().map(|cluster| cluster[rank]).collect())
                .collect(),
        };
        let mut symbol_to_message = vec![0; assignment.message_count()];
        for (message, coset) in cosets.iter().enumerate() {
            for &symbol in coset {
                symbol_to_message[symbol] = message;
            }
        }
        CosetCode {
            layout,
            cosets,
            symbol_to_message,
        }
    }

    pub fn layout(&self) -> CosetLayout {
        self.layout
    }

    pub fn secure_message_count(&self) -> usize {
        self.cosets.len()
    }

    pub fn symbols_per_message(&self) -> usize {
        self.cosets[0].len()
    }

    pub fn symbol_count(&self) -> usize {
        self.symbol_to_message.len()
    }

    pub fn coset(&self, message: usize) -> Option<&[usize]> {
        self.cosets.get(message).map(Vec::as_slice)
    }

    /// Secure bits carried per transmitted symbol.
    pub fn secure_bits(&self) -> f64 {
        (self.secure_message_count() as f64).log2()
    }

    /// Bits per symbol without coset coding.
    pub fn raw_bits(&self) -> f64 {
        (self.symbol_count() as f64).log2()
    }

    /// Draws a symbol uniformly from the coset of `message`.
    pub fn encode_secure<R: Rng + ?Sized>(&self, message: usize, rng: &mut R) -> Result<usize> {
        let coset = self.cosets.get(message).ok_or_else(|| {
            WiretapError::Input(format!(
                "secure message {message} outside 0..{}",
                self.cosets.len()
            ))
        })?;
        Ok(coset[rng.random_range(0..coset.len())])
    }

    /// The secure message whose coset contains `symbol`.
    pub fn decode_secure(&self, symbol: usize) -> Result<usize> {
        self.symbol_to_message.get(symbol).copied().ok_or_else(|| {
            WiretapError::Input(format!(
                "symbol {symbol} outside 0..{}",
                self.symbol_to_message.len()
            ))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sixteen_in_four() -> ClusterAssignment {
        let labels = (0..16).map(|i| (i * 7 % 16) / 4).collect();
        ClusterAssignment::from_labels(Array2::zeros((16, 2)).view(), labels).unwrap()
    }

    #[test]
    fn singleton_clusters_within_layout_is_identity() {
        let labels: Vec<usize> = (0..8).collect();
        let a = ClusterAssignment::from_labels(Array2::zeros((8, 1)).view(), labels).unwrap();
        let code = CosetCode::new(&a, CosetLayout::WithinCluster);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in 0..8 {
            assert_eq!(code.encode_secure(m, &mut rng).unwrap(), m);
            assert_eq!(code.decode_secure(m).unwrap(), m);
        }
    }

    #[test]
    fn across_layout_takes_one_symbol_per_cluster() {
        let a = sixteen_in_four();
        let code = CosetCode::new(&a, CosetLayout::AcrossClusters);
        assert_eq!(code.secure_message_count(), 4);
        assert_eq!(code.symbols_per_message(), 4);
        for m in 0..4 {
            let mut clusters: Vec<usize> =
                code.coset(m).unwrap().iter().map(|&s| a.labels()[s]).collect();
            clusters.sort_unstable();
            assert_eq!(clusters, vec![0, 1, 2, 3]);
        }
        assert_eq!(code.secure_bits(), 2.0);
        assert_eq!(code.raw_bits(), 4.0);
    }

    #[test]
    fn within_layout_decodes_cluster_label() {
        let a = sixteen_in_four();
        let code = CosetCode::new(&a, CosetLayout::WithinCluster);
        for s in 0..16 {
            assert_eq!(code.decode_secure(s).unwrap(), a.labels()[s]);
        }
    }

    #[test]
    fn draws_are_uniform_over_the_coset() {
        let a = sixteen_in_four();
        for layout in [CosetLayout::AcrossClusters, CosetLayout::WithinCluster] {
            let code = CosetCode::new(&a, layout);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            for m in 0..4 {
                let mut counts = [0usize; 16];
                for _ in 0..100_000 {
                    let s = code.encode_secure(m, &mut rng).unwrap();
                    counts[s] += 1;
                    assert_eq!(code.decode_secure(s).unwrap(), m);
                }
                for &s in code.coset(m).unwrap() {
                    let f = counts[s] as f64 / 100_000.0;
                    assert!((f - 0.25).abs() < 0.01, "{layout:?} message {m} symbol {s}: {f}");
                }
            }
        }
    }

    #[test]
    fn same_seed_same_symbols() {
        let code = CosetCode::new(&sixteen_in_four(), CosetLayout::AcrossClusters);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| code.encode_secure(i % 4, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
    }

    #[test]
    fn out_of_range_rejected() {
        let code = CosetCode::new(&sixteen_in_four(), CosetLayout::AcrossClusters);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(code.encode_secure(4, &mut rng).is_err());
        assert!(code.decode_secure(16).is_err());
    }

    #[test]
    fn message_errors_never_exceed_symbol_errors() {
        // Every (sent, decided) symbol pair: a correct symbol always yields the
        // correct message, so message errors are a subset of symbol errors.
        let code = CosetCode::new(&sixteen_in_four(), CosetLayout::AcrossClusters);
        for sent in 0..16 {
            for decided in 0..16 {
                let symbol_error = sent != decided;
                let message_error =
                    code.decode_secure(sent).unwrap() != code.decode_secure(decided).unwrap();
                assert!(!message_error || symbol_error);
            }
        }
    }
}
