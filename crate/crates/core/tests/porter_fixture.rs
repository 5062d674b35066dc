use xdoc_core::textproc::stem;

#[test]
fn matches_reference_stemmer_on_frozen_word_list() {
    let data = include_str!("data/porter_nltk.tsv");
    let mut mismatches = Vec::new();
    let mut checked = 0;
    for line in data.lines().filter(|l| !l.starts_with('#')) {
        let (word, expected) = line.split_once('\t').expect("word<TAB>stem");
        checked += 1;
        let got = stem(word);
        if got != expected {
            mismatches.push(format!("{word}: got {got}, expected {expected}"));
        }
    }
    assert!(checked > 3000);
    assert!(mismatches.is_empty(), "{} mismatches:\n{}", mismatches.len(), mismatches.join("\n"));
}

#[test]
fn stemming_the_fixture_stems_is_mostly_stable() {
    // The algorithm is not idempotent in general; on this list re-stemming
    // changes only a small minority of outputs.
    let data = include_str!("data/porter_nltk.tsv");
    let stems: Vec<&str> = data.lines().filter(|l| !l.starts_with('#')).filter_map(|l| l.split_once('\t')).map(|p| p.1).collect();
    let changed = stems.iter().filter(|s| stem(s) != **s).count();
    assert!(changed * 10 < stems.len(), "{changed} of {} changed", stems.len());
}
