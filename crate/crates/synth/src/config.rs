use serde::{Deserialize, Serialize};

use cohortforge_core::{Error, Result};

/// Fanout weights per dimension for one claim kind: `drugs[k]` is the
/// relative weight of a claim having `k` drug rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindProfile {
    /// Relative frequency of this kind among claims.
    pub weight: u32,
    pub drugs: Vec<u32>,
    pub acts: Vec<u32>,
    pub diagnoses: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimMix {
    pub pharmacy: KindProfile,
    pub outpatient: KindProfile,
    /// Hospital claims always carry exactly one stay.
    pub hospital: KindProfile,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub drugs: u32,
    pub acts: u32,
    pub diagnoses: u32,
    pub stays: u32,
}

/// Null probabilities in permille.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullRates {
    pub patient_id: u32,
    pub claim_date: u32,
    pub drug_code: u32,
    pub quantity: u32,
    pub act_code: u32,
    pub diag_code: u32,
}

impl Default for NullRates {
    fn default() -> Self {
        Self {
            patient_id: 5,
            claim_date: 5,
            drug_code: 10,
            quantity: 50,
            act_code: 10,
            diag_code: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_patients: u32,
    pub study_start: String,
    pub study_end: String,
    /// Claims may predate the study start by this many days.
    pub lookback_days: u32,
    /// Mean claims per patient; counts are uniform in `1..=2*mean-1`.
    pub claims_per_patient: u32,
    pub mix: ClaimMix,
    pub vocabulary: Vocabulary,
    #[serde(default)]
    pub nulls: NullRates,
    pub death_permille: u32,
    pub billing_permille: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            n_patients: 1000,
            study_start: "2010-01-01".into(),
            study_end: "2014-12-31".into(),
            lookback_days: 365,
            claims_per_patient: 20,
            mix: ClaimMix {
                pharmacy: KindProfile {
                    weight: 60,
                    drugs: vec![0, 90, 10],
                    acts: vec![1],
                    diagnoses: vec![1],
                },
                outpatient: KindProfile {
                    weight: 30,
                    drugs: vec![1],
                    acts: vec![0, 90, 10],
                    diagnoses: vec![50, 50],
                },
                hospital: KindProfile {
                    weight: 10,
                    drugs: vec![1],
                    acts: vec![0, 3, 3, 2, 2],
                    diagnoses: vec![0, 3, 3, 2, 2],
                },
            },
            vocabulary: Vocabulary {
                drugs: 40,
                acts: 30,
                diagnoses: 40,
                stays: 12,
            },
            nulls: NullRates::default(),
            death_permille: 50,
            billing_permille: 300,
        }
    }
}

impl SynthConfig {
    /// Outpatient-style data: nearly one dimension row per claim.
    pub fn dcir_like() -> Self {
        let mut c = Self::default();
        c.mix.pharmacy.drugs = vec![0, 96, 4];
        c.mix.outpatient.acts = vec![0, 96, 4];
        c.mix.outpatient.diagnoses = vec![1];
        c.mix.hospital.weight = 0;
        c
    }

    /// Hospital-style data: every claim is a stay whose acts and diagnoses
    /// multiply in the flat table.
    pub fn pmsi_like() -> Self {
        let mut c = Self::default();
        c.mix.pharmacy.weight = 0;
        c.mix.outpatient.weight = 0;
        c.mix.hospital = KindProfile {
            weight: 1,
            drugs: vec![1],
            acts: vec![0, 1, 1, 1, 1, 1, 1, 1, 1],
            diagnoses: vec![0, 1, 1, 1, 1, 1, 1],
        };
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        let start = crate::parse_date(&self.study_start)?;
        let end = crate::parse_date(&self.study_end)?;
        if start > end {
            return bad("study_start is after study_end");
        }
        let kinds = [&self.mix.pharmacy, &self.mix.outpatient, &self.mix.hospital];
        if kinds.iter().all(|k| k.weight == 0) {
            return bad("at least one claim kind needs a positive weight");
        }
        for k in kinds {
            for d in [&k.drugs, &k.acts, &k.diagnoses] {
                if d.iter().all(|&w| w == 0) {
                    return bad("fanout weights must not be all zero");
                }
            }
        }
        let v = &self.vocabulary;
        if v.drugs == 0 || v.acts == 0 || v.diagnoses == 0 || v.stays == 0 {
            return bad("vocabulary sizes must be positive");
        }
        let n = &self.nulls;
        let rates = [n.patient_id, n.claim_date, n.drug_code, n.quantity, n.act_code, n.diag_code];
        if rates.iter().chain([&self.death_permille, &self.billing_permille]).any(|&p| p > 1000) {
            return bad("probabilities are permille and must be at most 1000");
        }
        Ok(())
    }
}
