#![allow(dead_code)]

use std::collections::BTreeSet;

use anonreport_core::{Catalog, GeoDesignation, PublicReport, ReportId, TagId, Timestamp};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn places() -> Vec<GeoDesignation> {
    vec![
        GeoDesignation::country("usa").unwrap(),
        GeoDesignation::country("italy").unwrap(),
        GeoDesignation::province("usa", "indiana").unwrap(),
        GeoDesignation::province("usa", "ohio").unwrap(),
        GeoDesignation::city("usa", "indiana", "bloomington").unwrap(),
        GeoDesignation::city("usa", "indiana", "indianapolis").unwrap(),
        GeoDesignation::province("canada", "ontario").unwrap(),
    ]
}

/// Reports with arbitrary catalog tags (no single-select discipline; the
/// analytics must not care).
pub fn random_reports(n: usize, seed: u64) -> Vec<PublicReport> {
    let catalog = Catalog::builtin();
    let tags: Vec<TagId> = catalog.surveys().iter().flat_map(|s| s.tags().map(|t| t.id.clone())).collect();
    let places = places();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let k = rng.random_range(1..=12);
            let selections: BTreeSet<TagId> = (0..k).map(|_| tags.choose(&mut rng).unwrap().clone()).collect();
            PublicReport {
                report_id: ReportId::random(&mut rng),
                selections,
                designation: places.choose(&mut rng).unwrap().clone(),
                released_at: Timestamp::from_unix(86_400 * rng.random_range(16_000..16_400)),
            }
        })
        .collect()
}
