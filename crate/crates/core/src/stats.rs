//! Shape statistics of attention vectors and one-way ANOVA.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

use crate::error::{Error, Result};

pub const SIGNIFICANCE: f64 = 0.001;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistStats {
    pub range: f64,
    pub iqr: f64,
    pub std: f64,
    pub cv: f64,
    pub skew: f64,
    pub kurt: f64,
    /// Set for constant vectors, whose skew and kurtosis are reported as 0.
    pub constant: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StatKind {
    R,
    Iqr,
    Std,
    Cv,
    Skew,
    Kurt,
}

impl StatKind {
    pub const ALL: [StatKind; 6] = [
        StatKind::R,
        StatKind::Iqr,
        StatKind::Std,
        StatKind::Cv,
        StatKind::Skew,
        StatKind::Kurt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StatKind::R => "R",
            StatKind::Iqr => "IQR",
            StatKind::Std => "STD",
            StatKind::Cv => "CV",
            StatKind::Skew => "skew",
            StatKind::Kurt => "kurt",
        }
    }
}

impl DistStats {
    pub fn get(&self, k: StatKind) -> f64 {
        match k {
            StatKind::R => self.range,
            StatKind::Iqr => self.iqr,
            StatKind::Std => self.std,
            StatKind::Cv => self.cv,
            StatKind::Skew => self.skew,
            StatKind::Kurt => self.kurt,
        }
    }
}

/// Linear interpolation between order statistics at position `(n − 1)·q`.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// R, IQR, sample STD (n − 1), CV = STD/mean, moment skewness g₁ and excess
/// kurtosis g₂.
pub fn dist_stats(values: &[f64]) -> Result<DistStats> {
    if values.len() < 2 {
        return Err(Error::usage(format!(
            "distribution statistics need at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::usage("distribution statistics need finite values"));
    }
    let n = values.len() as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    let ss = m2;
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = (ss / (n - 1.0)).sqrt();
    let constant = sorted[0] == sorted[sorted.len() - 1];
    let (skew, kurt) = if constant || m2 == 0.0 {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    Ok(DistStats {
        range: sorted[sorted.len() - 1] - sorted[0],
        iqr: quantile(&sorted, 0.75) - quantile(&sorted, 0.25),
        std,
        cv: if mean == 0.0 { 0.0 } else { std / mean },
        skew,
        kurt,
        constant: constant || m2 == 0.0,
    })
}

/// Survival function of the F distribution, `P(F' > f)`, through the
/// regularized incomplete beta `I_{d2/(d2 + d1·f)}(d2/2, d1/2)`.
pub fn f_survival(f: f64, df1: f64, df2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(df2 / 2.0, df1 / 2.0, df2 / (df2 + df1 * f)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p: f64,
    pub group_means: Vec<f64>,
}

impl AnovaResult {
    pub fn significant(&self) -> bool {
        self.p < SIGNIFICANCE
    }
}

pub fn one_way_anova<G: AsRef<[f64]>>(groups: &[G]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::usage(format!(
            "ANOVA needs at least 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some((i, g)) = groups
        .iter()
        .enumerate()
        .find(|(_, g)| g.as_ref().len() < 2)
    {
        return Err(Error::usage(format!(
            "ANOVA group {i} has {} observation(s); at least 2 are required",
            g.as_ref().len()
        )));
    }
    if groups
        .iter()
        .flat_map(|g| g.as_ref())
        .any(|v| !v.is_finite())
    {
        return Err(Error::usage("ANOVA observations must be finite"));
    }
    let total: usize = groups.iter().map(|g| g.as_ref().len()).sum();
    let grand = groups.iter().flat_map(|g| g.as_ref()).sum::<f64>() / total as f64;
    let means: Vec<f64> = groups
        .iter()
        .map(|g| g.as_ref().iter().sum::<f64>() / g.as_ref().len() as f64)
        .collect();
    let ssb: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().len() as f64 * (m - grand).powi(2))
        .sum();
    let ssw: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.as_ref().iter().map(|v| (v - m).powi(2)).sum::<f64>())
        .sum();
    let df_between = groups.len() - 1;
    let df_within = total - groups.len();
    let (f, p) = if ssb == 0.0 {
        (0.0, 1.0)
    } else if ssw == 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        let f = (ssb / df_between as f64) / (ssw / df_within as f64);
        (f, f_survival(f, df_between as f64, df_within as f64))
    };
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p,
        group_means: means,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeRow {
    pub statistic: StatKind,
    pub anova: AnovaResult,
}

/// Six ANOVAs (one per shape statistic) across named groups of sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeStudy {
    pub grouping: String,
    pub groups: Vec<String>,
    pub rows: Vec<ShapeRow>,
}

pub fn attention_shape_study(
    grouping: &str,
    groups: &[(String, Vec<DistStats>)],
) -> Result<ShapeStudy> {
    if groups.len() < 2 {
        return Err(Error::usage(format!(
            "grouping `{grouping}` has {} group(s); at least 2 are required",
            groups.len()
        )));
    }
    if let Some((name, _)) = groups.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::usage(format!(
            "group `{name}` in `{grouping}` is empty"
        )));
    }
    let rows = StatKind::ALL
        .into_iter()
        .map(|k| {
            let values: Vec<Vec<f64>> = groups
                .iter()
                .map(|(_, v)| v.iter().map(|s| s.get(k)).collect())
                .collect();
            Ok(ShapeRow {
                statistic: k,
                anova: one_way_anova(&values)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ShapeStudy {
        grouping: grouping.to_string(),
        groups: groups.iter().map(|(n, _)| n.clone()).collect(),
        rows,
    })
}

pub const ANOVA_HEADER: [&str; 7] = [
    "grouping",
    "statistic",
    "F",
    "df_between",
    "df_within",
    "p",
    "significant_at_0.001",
];

pub fn write_anova_csv<W: std::io::Write>(studies: &[ShapeStudy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ANOVA_HEADER)?;
    for s in studies {
        for r in &s.rows {
            w.write_record([
                s.grouping.clone(),
                r.statistic.as_str().to_string(),
                r.anova.f.to_string(),
                r.anova.df_between.to_string(),
                r.anova.df_within.to_string(),
                r.anova.p.to_string(),
                r.anova.significant().to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

/// Group means per statistic: `grouping,statistic,group,mean`.
pub fn write_means_csv<W: std::io::Write>(studies: &[ShapeStudy], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["grouping", "statistic", "group", "mean"])?;
    for s in studies {
        for r in &s.rows {
            for (g, m) in s.groups.iter().zip(&r.anova.group_means) {
                w.write_record([
                    s.grouping.clone(),
                    r.statistic.as_str().to_string(),
                    g.clone(),
                    m.to_string(),
                ])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}
