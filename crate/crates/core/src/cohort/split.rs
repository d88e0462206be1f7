//! Stay-level train/validation/test partitioning.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::cohort::frames::TimeframeTensor;
use crate::cohort::record::CohortRecord;
use crate::error::{Error, Result};

pub trait AdmissionYear {
    fn admission_year(&self) -> i32;
}

impl AdmissionYear for CohortRecord {
    fn admission_year(&self) -> i32 {
        self.admission_year
    }
}

impl AdmissionYear for TimeframeTensor {
    fn admission_year(&self) -> i32 {
        self.admission_year
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub val: Vec<T>,
    pub test: Vec<T>,
}

impl<T> Splits<T> {
    pub fn sizes(&self) -> (usize, usize, usize) {
        (self.train.len(), self.val.len(), self.test.len())
    }
}

/// How the test set is chosen.
#[derive(Clone, Debug, PartialEq)]
pub enum SplitMode {
    /// Test = stays admitted in `test_years`; train/val drawn from `train_years`.
    ByYear { train_years: BTreeSet<i32>, test_years: BTreeSet<i32> },
    /// Test = a random `test_fraction` of all stays.
    Random { test_fraction: f64 },
}

impl SplitMode {
    /// Train-validation 2008–2016, test 2017–2019.
    pub fn default_by_year() -> Self {
        SplitMode::ByYear { train_years: (2008..=2016).collect(), test_years: (2017..=2019).collect() }
    }

    pub fn split<T: Clone + AdmissionYear>(&self, items: &[T], val_fraction: f64, rng: &mut impl Rng) -> Result<Splits<T>> {
        match self {
            SplitMode::ByYear { train_years, test_years } => split_by_year(items, train_years, test_years, val_fraction, rng),
            SplitMode::Random { test_fraction } => split_random(items, *test_fraction, val_fraction, rng),
        }
    }
}

fn carve<T: Clone>(mut pool: Vec<T>, val_fraction: f64, test: Vec<T>, rng: &mut impl Rng) -> Result<Splits<T>> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::Config(format!("val_fraction must lie in [0, 1), got {val_fraction}")));
    }
    pool.shuffle(rng);
    let n_val = (val_fraction * pool.len() as f64).round() as usize;
    let train = pool.split_off(n_val);
    let splits = Splits { train, val: pool, test };
    let (a, b, c) = splits.sizes();
    if a == 0 || b == 0 || c == 0 {
        return Err(Error::Config(format!("empty split: train={a}, val={b}, test={c}")));
    }
    Ok(splits)
}

/// Test = stays whose admission year is in `test_years`; the stays from
/// `train_years` are shuffled and split into train/val by `val_fraction`.
/// Stays in neither set are left out.
pub fn split_by_year<T: Clone + AdmissionYear>(
    items: &[T],
    train_years: &BTreeSet<i32>,
    test_years: &BTreeSet<i32>,
    val_fraction: f64,
    rng: &mut impl Rng,
) -> Result<Splits<T>> {
    if let Some(y) = train_years.intersection(test_years).next() {
        return Err(Error::Config(format!("year {y} is in both the train and test sets")));
    }
    let test = items.iter().filter(|r| test_years.contains(&r.admission_year())).cloned().collect();
    let pool = items.iter().filter(|r| train_years.contains(&r.admission_year())).cloned().collect();
    carve(pool, val_fraction, test, rng)
}

pub fn split_random<T: Clone>(items: &[T], test_fraction: f64, val_fraction: f64, rng: &mut impl Rng) -> Result<Splits<T>> {
    if !(0.0..1.0).contains(&test_fraction) {
        return Err(Error::Config(format!("test_fraction must lie in [0, 1), got {test_fraction}")));
    }
    let mut all = items.to_vec();
    all.shuffle(rng);
    let n_test = (test_fraction * all.len() as f64).round() as usize;
    let pool = all.split_off(n_test);
    carve(pool, val_fraction, all, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::seeded;

    #[derive(Clone, Debug, PartialEq)]
    struct Stay(u32, i32);

    impl AdmissionYear for Stay {
        fn admission_year(&self) -> i32 {
            self.1
        }
    }

    #[test]
    fn missing_test_years_is_an_error() {
        let items: Vec<Stay> = (0..10).map(|i| Stay(i, 2016)).collect();
        let r = split_by_year(&items, &(2008..=2016).collect(), &[2018, 2019].into(), 0.2, &mut seeded(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn overlapping_years_rejected() {
        let items: Vec<Stay> = (0..10).map(|i| Stay(i, 2016)).collect();
        let r = split_by_year(&items, &(2008..=2017).collect(), &(2017..=2019).collect(), 0.2, &mut seeded(0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn default_years_and_partition() {
        let items: Vec<Stay> = (0..130).map(|i| Stay(i, if i < 100 { 2008 + (i % 9) as i32 } else { 2017 + (i % 3) as i32 })).collect();
        let s = SplitMode::default_by_year().split(&items, 0.2, &mut seeded(4)).unwrap();
        assert_eq!(s.sizes(), (80, 20, 30));
        let mut ids: Vec<u32> = s.train.iter().chain(&s.val).chain(&s.test).map(|x| x.0).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 130);
        assert!(s.test.iter().all(|x| x.1 >= 2017));
        assert!(s.train.iter().chain(&s.val).all(|x| x.1 <= 2016));
    }

    #[test]
    fn random_mode() {
        let items: Vec<Stay> = (0..100).map(|i| Stay(i, 2010)).collect();
        let s = split_random(&items, 0.25, 0.2, &mut seeded(1)).unwrap();
        assert_eq!(s.sizes(), (60, 15, 25));
    }
}
