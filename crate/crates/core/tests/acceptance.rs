//! Runs all ten acceptance criteria and prints one line per criterion.

use chaos_wishart::acceptance;

fn main() {
    // libtest-style flags are accepted and ignored; bare numbers select criteria
    let ids: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (i, t) in acceptance::TITLES.iter().enumerate() {
            println!("criterion {}: {t}", i + 1);
        }
        return;
    }
    let outcomes = acceptance::run_all(&ids, |o| println!("{o}"));
    let failed: Vec<usize> = outcomes.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    println!("{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
