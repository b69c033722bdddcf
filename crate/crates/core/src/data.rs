//! Datasets with categorical covariates, dummy coding and the coefficient
//! layout shared by every estimator in the crate.
//!
//! Within a covariate, levels are addressed in two ways. A *level index*
//! points into [`CategoricalCovariate::levels`]. An *element index* is the
//! position used by partitions and coefficient vectors: element 0 is the
//! baseline, elements `1..=c` are the non-baseline levels in label order, so
//! element `k >= 1` is the `k`-th effect `beta[k - 1]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalCovariate {
    name: String,
    levels: Vec<String>,
    baseline: usize,
    observations: Vec<usize>,
}

impl CategoricalCovariate {
    /// Builds a covariate whose baseline is the first level.
    pub fn new(
        name: impl Into<String>,
        levels: Vec<String>,
        observations: Vec<usize>,
    ) -> Result<Self> {
        Self::with_baseline(name, levels, 0, observations)
    }

    pub fn with_baseline(
        name: impl Into<String>,
        levels: Vec<String>,
        baseline: usize,
        observations: Vec<usize>,
    ) -> Result<Self> {
        let name = name.into();
        if levels.len() < 2 {
            return Err(Error::TooFewLevels(name));
        }
        for (i, level) in levels.iter().enumerate() {
            if levels[..i].contains(level) {
                return Err(Error::DuplicateLevel {
                    covariate: name,
                    level: level.clone(),
                });
            }
        }
        if baseline >= levels.len() {
            return Err(Error::LevelOutOfRange {
                covariate: name,
                record: 0,
                index: baseline,
                levels: levels.len(),
            });
        }
        let mut seen = vec![false; levels.len()];
        for (record, &index) in observations.iter().enumerate() {
            if index >= levels.len() {
                return Err(Error::LevelOutOfRange {
                    covariate: name,
                    record,
                    index,
                    levels: levels.len(),
                });
            }
            seen[index] = true;
        }
        if !observations.is_empty() {
            if let Some(missing) = (0..levels.len()).find(|&l| l != baseline && !seen[l]) {
                return Err(Error::UnobservedLevel {
                    covariate: name,
                    level: levels[missing].clone(),
                });
            }
        }
        Ok(CategoricalCovariate {
            name,
            levels,
            baseline,
            observations,
        })
    }

    /// Builds a covariate from raw per-record labels. Levels are the distinct
    /// labels, ordered numerically when every label parses as a number and
    /// lexicographically otherwise. The baseline defaults to the first level.
    pub fn from_labels<S: AsRef<str>>(
        name: impl Into<String>,
        labels: &[S],
        baseline: Option<&str>,
    ) -> Result<Self> {
        let name = name.into();
        let mut levels: Vec<String> = labels.iter().map(|s| s.as_ref().to_string()).collect();
        levels.sort();
        levels.dedup();
        if levels.iter().all(|l| l.trim().parse::<f64>().is_ok()) {
            levels.sort_by(|a, b| {
                let (x, y) = (a.trim().parse::<f64>().unwrap(), b.trim().parse::<f64>().unwrap());
                x.total_cmp(&y).then_with(|| a.cmp(b))
            });
        }
        let baseline = match baseline {
            None => 0,
            Some(b) => levels
                .iter()
                .position(|l| l == b)
                .ok_or_else(|| Error::UnknownBaseline {
                    covariate: name.clone(),
                    baseline: b.to_string(),
                })?,
        };
        let observations = labels
            .iter()
            .map(|s| levels.iter().position(|l| l == s.as_ref()).unwrap())
            .collect();
        Self::with_baseline(name, levels, baseline, observations)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn levels(&self) -> &[String] {
        &self.levels
    }

    pub fn baseline(&self) -> usize {
        self.baseline
    }

    pub fn observations(&self) -> &[usize] {
        &self.observations
    }

    /// Number of level effects `c`, i.e. levels minus the baseline.
    pub fn n_effects(&self) -> usize {
        self.levels.len() - 1
    }

    /// Level index of each element (element 0 is the baseline).
    pub fn element_levels(&self) -> Vec<usize> {
        std::iter::once(self.baseline)
            .chain((0..self.levels.len()).filter(|&l| l != self.baseline))
            .collect()
    }

    pub fn element_label(&self, element: usize) -> &str {
        &self.levels[self.element_levels()[element]]
    }

    /// Element index of a level index.
    pub fn element_of_level(&self, level: usize) -> usize {
        match level.cmp(&self.baseline) {
            std::cmp::Ordering::Equal => 0,
            std::cmp::Ordering::Less => level + 1,
            std::cmp::Ordering::Greater => level,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousCovariate {
    name: String,
    values: Vec<f64>,
}

impl ContinuousCovariate {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        Ok(ContinuousCovariate { name, values })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response: Vec<f64>,
    categorical: Vec<CategoricalCovariate>,
    continuous: Vec<ContinuousCovariate>,
}

impl Dataset {
    pub fn new(
        response: Vec<f64>,
        categorical: Vec<CategoricalCovariate>,
        continuous: Vec<ContinuousCovariate>,
    ) -> Result<Self> {
        let n = response.len();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("response".into()));
        }
        for cov in &categorical {
            if cov.observations.len() != n {
                return Err(Error::LengthMismatch {
                    name: cov.name.clone(),
                    expected: n,
                    got: cov.observations.len(),
                });
            }
        }
        for cov in &continuous {
            if cov.values.len() != n {
                return Err(Error::LengthMismatch {
                    name: cov.name.clone(),
                    expected: n,
                    got: cov.values.len(),
                });
            }
        }
        let data = Dataset {
            response,
            categorical,
            continuous,
        };
        let columns = data.layout().len();
        if n <= columns {
            log::warn!(
                "{n} observations for {columns} design columns: the flat-prior fit is not well posed"
            );
        }
        Ok(data)
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn categorical(&self) -> &[CategoricalCovariate] {
        &self.categorical
    }

    pub fn continuous(&self) -> &[ContinuousCovariate] {
        &self.continuous
    }

    pub fn n_records(&self) -> usize {
        self.response.len()
    }

    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout {
            effects: self.categorical.iter().map(|c| c.n_effects()).collect(),
            continuous: self.continuous.len(),
        }
    }
}

/// Shape of a coefficient vector: intercept, `effects[j]` level effects per
/// categorical covariate, then the continuous effects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoefficientLayout {
    pub effects: Vec<usize>,
    pub continuous: usize,
}

impl CoefficientLayout {
    pub fn len(&self) -> usize {
        1 + self.n_effects() + self.continuous
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Total number of level effects `C`.
    pub fn n_effects(&self) -> usize {
        self.effects.iter().sum()
    }

    /// Flat offset of the first effect of covariate `j`.
    pub fn effect_offset(&self, j: usize) -> usize {
        1 + self.effects[..j].iter().sum::<usize>()
    }

    pub fn continuous_offset(&self) -> usize {
        1 + self.n_effects()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Column {
    Intercept,
    /// Dummy column of level index `level` of covariate `covariate`;
    /// `element` is that level's element index (always `>= 1`).
    Level {
        covariate: usize,
        level: usize,
        element: usize,
    },
    Continuous(usize),
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: DMatrix<f64>,
    columns: Vec<Column>,
    layout: CoefficientLayout,
}

impl DesignMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn layout(&self) -> &CoefficientLayout {
        &self.layout
    }

    pub fn n_rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_columns(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Dummy-codes a dataset: intercept, then each covariate's non-baseline
/// levels in label order, then the continuous columns.
pub fn build_design(data: &Dataset) -> Result<DesignMatrix> {
    let n = data.n_records();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut columns = vec![Column::Intercept];
    for (j, cov) in data.categorical.iter().enumerate() {
        for (element, &level) in cov.element_levels().iter().enumerate().skip(1) {
            columns.push(Column::Level {
                covariate: j,
                level,
                element,
            });
        }
    }
    columns.extend((0..data.continuous.len()).map(Column::Continuous));

    let mut matrix = DMatrix::zeros(n, columns.len());
    for (c, col) in columns.iter().enumerate() {
        match *col {
            Column::Intercept => matrix.column_mut(c).fill(1.0),
            Column::Level {
                covariate, level, ..
            } => {
                for (i, &obs) in data.categorical[covariate].observations.iter().enumerate() {
                    if obs == level {
                        matrix[(i, c)] = 1.0;
                    }
                }
            }
            Column::Continuous(q) => {
                for (i, &v) in data.continuous[q].values.iter().enumerate() {
                    matrix[(i, c)] = v;
                }
            }
        }
    }
    Ok(DesignMatrix {
        matrix,
        columns,
        layout: data.layout(),
    })
}

/// Regression coefficients in structured form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub intercept: f64,
    /// `effects[j][k]` is the effect of element `k + 1` of covariate `j`.
    pub effects: Vec<Vec<f64>>,
    pub continuous: Vec<f64>,
}

impl CoefficientVector {
    pub fn zeros(layout: &CoefficientLayout) -> Self {
        CoefficientVector {
            intercept: 0.0,
            effects: layout.effects.iter().map(|&c| vec![0.0; c]).collect(),
            continuous: vec![0.0; layout.continuous],
        }
    }

    pub fn layout(&self) -> CoefficientLayout {
        CoefficientLayout {
            effects: self.effects.iter().map(Vec::len).collect(),
            continuous: self.continuous.len(),
        }
    }

    pub fn flatten(&self) -> DVector<f64> {
        let values: Vec<f64> = std::iter::once(self.intercept)
            .chain(self.effects.iter().flatten().copied())
            .chain(self.continuous.iter().copied())
            .collect();
        DVector::from_vec(values)
    }

    pub fn unflatten(values: &[f64], layout: &CoefficientLayout) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::LayoutMismatch {
                expected: layout.len(),
                got: values.len(),
            });
        }
        let mut offset = 1;
        let effects = layout
            .effects
            .iter()
            .map(|&c| {
                let block = values[offset..offset + c].to_vec();
                offset += c;
                block
            })
            .collect();
        Ok(CoefficientVector {
            intercept: values[0],
            effects,
            continuous: values[offset..].to_vec(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("L{i}")).collect()
    }

    #[test]
    fn dummy_block_for_three_levels() {
        let cov = CategoricalCovariate::new("a", labels(3), vec![0, 1, 2]).unwrap();
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![cov], vec![]).unwrap();
        let design = build_design(&data).unwrap();
        let m = design.matrix();
        assert_eq!(m.ncols(), 3);
        let block: Vec<(f64, f64)> = (0..3).map(|i| (m[(i, 1)], m[(i, 2)])).collect();
        assert_eq!(block, vec![(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]);
        assert!(m.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn out_of_range_level_is_rejected() {
        let err = CategoricalCovariate::new("a", labels(3), vec![0, 1, 3]).unwrap_err();
        assert!(matches!(err, Error::LevelOutOfRange { index: 3, .. }));
    }

    #[test]
    fn unobserved_level_is_rejected() {
        let err = CategoricalCovariate::new("a", labels(3), vec![0, 1, 1]).unwrap_err();
        assert!(matches!(err, Error::UnobservedLevel { .. }));
    }

    #[test]
    fn unobserved_baseline_is_fine() {
        assert!(CategoricalCovariate::new("a", labels(3), vec![1, 2, 1]).is_ok());
    }

    #[test]
    fn column_count_with_continuous() {
        let a = CategoricalCovariate::new("a", labels(3), vec![0, 1, 2, 0, 1, 2]).unwrap();
        let b = CategoricalCovariate::new("b", labels(2), vec![0, 1, 0, 1, 0, 1]).unwrap();
        let x = ContinuousCovariate::new("x", vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let data = Dataset::new(vec![0.0; 6], vec![a, b], vec![x]).unwrap();
        let design = build_design(&data).unwrap();
        assert_eq!(design.n_columns(), 5);
        assert_eq!(design.columns()[4], Column::Continuous(0));
        assert_eq!(design.matrix()[(2, 4)], 0.3);
    }

    #[test]
    fn non_first_baseline_skips_its_column() {
        let cov = CategoricalCovariate::with_baseline("a", labels(3), 1, vec![0, 1, 2]).unwrap();
        let data = Dataset::new(vec![1.0, 2.0, 3.0], vec![cov.clone()], vec![]).unwrap();
        let design = build_design(&data).unwrap();
        assert_eq!(
            design.columns()[1..],
            [
                Column::Level { covariate: 0, level: 0, element: 1 },
                Column::Level { covariate: 0, level: 2, element: 2 },
            ]
        );
        // baseline row has an all-zero dummy block
        assert_eq!(design.matrix()[(1, 1)] + design.matrix()[(1, 2)], 0.0);
        assert_eq!(cov.element_label(0), "L1");
        assert_eq!(cov.element_of_level(2), 2);
        assert_eq!(cov.element_of_level(0), 1);
    }

    #[test]
    fn labels_sort_numerically() {
        let cov = CategoricalCovariate::from_labels("a", &["10", "2", "1", "2"], Some("2")).unwrap();
        assert_eq!(cov.levels(), ["1", "2", "10"]);
        assert_eq!(cov.baseline(), 1);
        assert_eq!(cov.observations(), [2, 1, 0, 1]);
    }

    #[test]
    fn flatten_layout() {
        let coefs = CoefficientVector {
            intercept: 1.0,
            effects: vec![vec![2.0, 3.0]],
            continuous: vec![],
        };
        assert_eq!(coefs.flatten().as_slice(), [1.0, 2.0, 3.0]);
        let back = CoefficientVector::unflatten(&[1.0, 2.0, 3.0], &coefs.layout()).unwrap();
        assert_eq!(back, coefs);
    }

    #[test]
    fn unflatten_wrong_length() {
        let layout = CoefficientLayout { effects: vec![2], continuous: 0 };
        assert!(matches!(
            CoefficientVector::unflatten(&[1.0, 2.0], &layout),
            Err(Error::LayoutMismatch { expected: 3, got: 2 })
        ));
    }
}
