//! Deterministic generators for the synthetic selectivity table and the
//! page_views/users pair.

use std::fmt::Write as _;

use rand::distributions::{Alphanumeric, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dfs::{Dataset, Dfs, DfsError};
use crate::schema::Schema;
use crate::workloads::synthetic_columns;

/// Cardinalities of the uniform integer fields field6..field11.
pub const INT_CARDINALITIES: [u32; 6] = [200, 100, 20, 10, 5, 2];
/// Share of rows whose field12 holds the designated value.
pub const FIELD12_SHARE: f64 = 0.6;
/// Value every equality-selectivity predicate tests for.
pub const DESIGNATED: u32 = 0;
const STRING_LEN: usize = 20;

/// Expected fraction of rows selected by `field{i} == 0`, for i in 6..=12.
pub fn expected_selectivity(field: usize) -> Option<f64> {
    match field {
        6..=11 => Some(1.0 / INT_CARDINALITIES[field - 6] as f64),
        12 => Some(FIELD12_SHARE),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub rows: u64,
    pub seed: u64,
    /// Part files, generated in parallel.
    pub parts: usize,
}

impl SyntheticSpec {
    pub fn new(rows: u64, seed: u64) -> Self {
        SyntheticSpec { rows, seed, parts: 8 }
    }
}

fn part_rng(seed: u64, part: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(part as u64);
    rng
}

fn push_string(rng: &mut impl Rng, len: usize, out: &mut String) {
    out.extend(Alphanumeric.sample_iter(rng).take(len).map(char::from));
}

/// One tab-separated synthetic row.
pub fn synthetic_row(rng: &mut impl Rng, out: &mut String) {
    out.clear();
    for i in 0..5 {
        if i > 0 {
            out.push('\t');
        }
        push_string(rng, STRING_LEN, out);
    }
    for c in INT_CARDINALITIES {
        let _ = write!(out, "\t{}", rng.gen_range(0..c));
    }
    let f12 = if rng.gen_bool(FIELD12_SHARE) { DESIGNATED } else { 1 };
    let _ = write!(out, "\t{f12}");
}

fn rows_in_part(rows: u64, parts: usize, part: usize) -> u64 {
    let parts = parts as u64;
    rows / parts + u64::from((part as u64) < rows % parts)
}

pub fn generate_synthetic(dfs: &Dfs, path: &str, spec: &SyntheticSpec, overwrite: bool) -> Result<Dataset, DfsError> {
    let parts = spec.parts.max(1);
    let writer = dfs.create(path, overwrite)?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(parts);
    std::thread::scope(|s| -> Result<(), DfsError> {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                let writer = &writer;
                s.spawn(move || -> Result<(), DfsError> {
                    for part in (t..parts).step_by(threads) {
                        let mut rng = part_rng(spec.seed, part);
                        let mut w = writer.part(part)?;
                        let mut line = String::with_capacity(160);
                        for _ in 0..rows_in_part(spec.rows, parts, part) {
                            synthetic_row(&mut rng, &mut line);
                            w.write_record(&line)?;
                        }
                        w.finish()?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().try_for_each(|h| h.join().expect("generator thread panicked"))
    })?;
    let cols = synthetic_columns();
    let names: Vec<&str> = cols.iter().map(String::as_str).collect();
    writer.commit(Some(&Schema::atoms(&names)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PigMixSpec {
    pub page_views: u64,
    pub users: u64,
    pub seed: u64,
}

pub fn user_name(i: u64) -> String {
    format!("user{i:08}")
}

/// Write `users` (name, phone, address, city) and `page_views` (user,
/// timestamp, est_revenue, page_info, page_links). Page view users are
/// drawn from twice as many names as exist, so about half of the views
/// join.
pub fn generate_pigmix_like(
    dfs: &Dfs,
    page_views_path: &str,
    users_path: &str,
    spec: &PigMixSpec,
    overwrite: bool,
) -> Result<(Dataset, Dataset), DfsError> {
    let mut rng = part_rng(spec.seed, 0);
    let mut line = String::new();
    let users = dfs.create(users_path, overwrite)?;
    let mut w = users.part(0)?;
    for i in 0..spec.users {
        line.clear();
        let _ = write!(line, "{}\t555-{:04}\t", user_name(i), rng.gen_range(0..10_000));
        push_string(&mut rng, 24, &mut line);
        let _ = write!(line, "\tcity{}", rng.gen_range(0..50));
        w.write_record(&line)?;
    }
    w.finish()?;
    let users = users.commit(Some(&Schema::atoms(&["name", "phone", "address", "city"])))?;

    let mut rng = part_rng(spec.seed, 1);
    let pool = (spec.users * 2).max(1);
    let views = dfs.create(page_views_path, overwrite)?;
    let mut w = views.part(0)?;
    for _ in 0..spec.page_views {
        line.clear();
        let _ = write!(
            line,
            "{}\t{}\t{}.{:02}\t",
            user_name(rng.gen_range(0..pool)),
            1_200_000_000 + rng.gen_range(0..100_000_000u64),
            rng.gen_range(0..100),
            rng.gen_range(0..100)
        );
        push_string(&mut rng, 60, &mut line);
        line.push('\t');
        push_string(&mut rng, 60, &mut line);
        w.write_record(&line)?;
    }
    w.finish()?;
    let views = views.commit(Some(&Schema::atoms(&[
        "user",
        "timestamp",
        "est_revenue",
        "page_info",
        "page_links",
    ])))?;
    Ok((views, users))
}
