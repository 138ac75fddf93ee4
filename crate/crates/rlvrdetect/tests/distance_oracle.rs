//! Distance kernel vs an independent naive full-table DP oracle, plus the
//! matrix-level invariants that must survive parallel evaluation.

use rand::prelude::IndexedRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rlvrdetect::distance::{
    levenshtein, normalized_levenshtein, pairwise_distance_matrix, pairwise_distance_matrix_with,
    DistanceOptions, UnitMode, UnitSequence,
};

/// Textbook full-table DP, kept deliberately unoptimized.
fn naive_levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in table[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = (table[i - 1][j] + 1)
                .min(table[i][j - 1] + 1)
                .min(table[i - 1][j - 1] + sub);
        }
    }
    table[a.len()][b.len()]
}

fn random_text(rng: &mut ChaCha20Rng, len: usize, alphabet: &[char]) -> String {
    (0..len).map(|_| *alphabet.choose(rng).expect("alphabet")).collect()
}

fn char_distance(a: &str, b: &str) -> usize {
    let sa = UnitSequence::new(a, UnitMode::Char, 0);
    let sb = UnitSequence::new(b, UnitMode::Char, 0);
    levenshtein(&sa, &sb)
}

#[test]
fn kernel_equals_naive_dp_on_1000_random_pairs() {
    let alphabet = ['a', 'b', 'c', 'd'];
    let mut rng = ChaCha20Rng::seed_from_u64(0x5eed);
    for case in 0..1000 {
        let la = rng.random_range(0..=200usize);
        let lb = rng.random_range(0..=200usize);
        let a = random_text(&mut rng, la, &alphabet);
        let b = random_text(&mut rng, lb, &alphabet);
        let expected =
            naive_levenshtein(&a.chars().collect::<Vec<_>>(), &b.chars().collect::<Vec<_>>());
        let got = char_distance(&a, &b);
        assert_eq!(got, expected, "case {case}: d({a:?}, {b:?})");
    }
}

#[test]
fn matrix_entries_equal_naive_oracle() {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let alphabet = ['a', 'b', 'c', 'd'];
    let texts: Vec<String> = (0..12)
        .map(|_| {
            let len = rng.random_range(0..=60);
            random_text(&mut rng, len, &alphabet)
        })
        .collect();
    let matrix = pairwise_distance_matrix(&texts, UnitMode::Char);
    for i in 0..texts.len() {
        for j in 0..texts.len() {
            let chars_i: Vec<char> = texts[i].chars().collect();
            let chars_j: Vec<char> = texts[j].chars().collect();
            let raw = naive_levenshtein(&chars_i, &chars_j);
            let denom = chars_i.len().max(chars_j.len());
            let expected = if denom == 0 { 0.0 } else { raw as f64 / denom as f64 };
            assert_eq!(matrix.get(i, j), expected, "entry ({i},{j})");
        }
    }
}

#[test]
fn matrix_invariants_and_thread_independence() {
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    let vocab: Vec<String> = (0..80).map(|i| format!("w{i}")).collect();
    let texts: Vec<String> = (0..24)
        .map(|_| {
            let len = rng.random_range(1..=120usize);
            (0..len)
                .map(|_| vocab.choose(&mut rng).expect("vocab").clone())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();

    let parallel = pairwise_distance_matrix(&texts, UnitMode::Token);
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(|| pairwise_distance_matrix(&texts, UnitMode::Token));

    for i in 0..texts.len() {
        assert_eq!(parallel.get(i, i), 0.0);
        for j in 0..texts.len() {
            let v = parallel.get(i, j);
            assert!((0.0..=1.0).contains(&v));
            assert_eq!(v, parallel.get(j, i), "symmetry at ({i},{j})");
            assert_eq!(v.to_bits(), single.get(i, j).to_bits(), "thread dependence at ({i},{j})");
        }
    }
}

#[test]
fn token_mode_equals_char_mode_on_token_ids() {
    // Injective token -> symbol mapping turns token-mode inputs into
    // char-mode inputs with identical distances.
    let mut rng = ChaCha20Rng::seed_from_u64(41);
    let vocab: Vec<String> = (0..26).map(|i| format!("tk{i}")).collect();
    let symbols: Vec<char> = ('a'..='z').collect();
    for _ in 0..50 {
        let mk = |rng: &mut ChaCha20Rng| -> Vec<usize> {
            let len = rng.random_range(0..=40usize);
            (0..len).map(|_| rng.random_range(0..vocab.len())).collect()
        };
        let ids_a = mk(&mut rng);
        let ids_b = mk(&mut rng);
        let text_a: String =
            ids_a.iter().map(|&i| vocab[i].as_str()).collect::<Vec<_>>().join(" ");
        let text_b: String =
            ids_b.iter().map(|&i| vocab[i].as_str()).collect::<Vec<_>>().join(" ");
        let sa = UnitSequence::new(&text_a, UnitMode::Token, 0);
        let sb = UnitSequence::new(&text_b, UnitMode::Token, 0);
        let mapped_a: String = ids_a.iter().map(|&i| symbols[i]).collect();
        let mapped_b: String = ids_b.iter().map(|&i| symbols[i]).collect();
        assert_eq!(levenshtein(&sa, &sb), char_distance(&mapped_a, &mapped_b));
        let na = normalized_levenshtein(&sa, &sb);
        assert!((0.0..=1.0).contains(&na));
    }
}

#[test]
fn equal_length_disjoint_strings_have_distance_one() {
    let sa = UnitSequence::new("aaaa", UnitMode::Char, 0);
    let sb = UnitSequence::new("bbbb", UnitMode::Char, 0);
    assert_eq!(normalized_levenshtein(&sa, &sb), 1.0);
}

/// 32 completions of 1,024 tokens each: the full-size workload. Times are
/// reported, not gated; the acceptance suite prints them alongside the
/// soft targets.
#[test]
fn full_size_matrix_timing_report() {
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let vocab: Vec<String> = (0..500).map(|i| format!("tok{i}")).collect();
    let texts: Vec<String> = (0..32)
        .map(|_| {
            (0..1024)
                .map(|_| vocab.choose(&mut rng).expect("vocab").clone())
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let opts = DistanceOptions::default();

    let start = std::time::Instant::now();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .expect("pool")
        .install(|| pairwise_distance_matrix_with(&texts, &opts));
    let single_elapsed = start.elapsed();

    let start = std::time::Instant::now();
    let parallel = pairwise_distance_matrix_with(&texts, &opts);
    let parallel_elapsed = start.elapsed();

    println!(
        "32x1024-token matrix: {:.3}s single-thread, {:.3}s parallel",
        single_elapsed.as_secs_f64(),
        parallel_elapsed.as_secs_f64()
    );
    for i in 0..32 {
        for j in 0..32 {
            assert_eq!(single.get(i, j).to_bits(), parallel.get(i, j).to_bits());
        }
    }
}
