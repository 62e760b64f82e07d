use std::collections::BTreeSet;

use proptest::prelude::*;

use dcnn::ingest::{dev_split, kfold_split, read_conllu, validate_tree, write_conllu, ReadOptions};
use dcnn::numerics::{max_pool, rng_from_seed, softmax};
use dcnn::patterns::{ancestor_window, nearest_siblings, sequential_window, Slot};
use dcnn::synthetic::{random_forest_heads, random_heads};
use dcnn::*;

fn tree(max_len: usize) -> impl Strategy<Value = (Vec<usize>, u64)> {
    (1..=max_len, any::<u64>(), any::<bool>()).prop_map(|(len, seed, forest)| {
        let mut rng = rng_from_seed(seed);
        let heads = if forest {
            random_forest_heads(&mut rng, len)
        } else {
            random_heads(&mut rng, len)
        };
        (heads, seed)
    })
}

fn words(len: usize, seed: u64) -> Vec<String> {
    (0..len)
        .map(|i| format!("w{}", (seed as usize + i * 7) % 13))
        .collect()
}

proptest! {
    #[test]
    fn conll_round_trip((heads, seed) in tree(20), label in 0usize..3) {
        let forms = words(heads.len(), seed);
        let refs: Vec<&str> = forms.iter().map(String::as_str).collect();
        let s = DepSentence::from_heads("rt1", &refs, &heads).with_label(label);
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let text = write_conllu(std::slice::from_ref(&s), &names);
        let opts = ReadOptions { label_space: Some(names.clone()), ..ReadOptions::default() };
        let back = read_conllu(&text, None, &opts).unwrap();
        prop_assert_eq!(back.sentences.len(), 1);
        let r = &back.sentences[0];
        prop_assert_eq!(r.heads(), heads);
        prop_assert_eq!(r.label, Some(label));
        prop_assert_eq!(&r.source_id, "rt1");
        prop_assert_eq!(r.text(), s.text());
    }

    #[test]
    fn generated_trees_validate((heads, _) in tree(30)) {
        let s = DepSentence::from_heads("v", &vec!["x"; heads.len()], &heads);
        prop_assert_eq!(validate_tree(&s, false), Ok(()));
    }

    #[test]
    fn kfold_partitions(len in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(k <= len);
        let folds = kfold_split(len, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = vec![0; len];
        for f in &folds {
            let sizes = (len / k, len.div_ceil(k));
            prop_assert!(f.test.len() == sizes.0 || f.test.len() == sizes.1);
            let test: BTreeSet<usize> = f.test.iter().copied().collect();
            prop_assert_eq!(f.train.len() + f.test.len(), len);
            prop_assert!(f.train.iter().all(|i| !test.contains(i)));
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn dev_split_is_a_partition(n in 2usize..500, frac in 0.01f64..0.99, seed in any::<u64>()) {
        let train: Vec<usize> = (100..100 + n).collect();
        let (rest, dev) = dev_split(&train, frac, seed).unwrap();
        prop_assert!(!dev.is_empty() && !rest.is_empty());
        prop_assert_eq!(rest.len() + dev.len(), n);
        let mut all: Vec<usize> = rest.iter().chain(&dev).copied().collect();
        all.sort();
        prop_assert_eq!(all, train);
    }

    /// Every slot is a real word, ROOT or zero pad; sizes are fixed.
    #[test]
    fn windows_are_total((heads, _) in tree(25)) {
        let len = heads.len();
        let s = DepSentence::from_heads("w", &vec!["x"; len], &heads);
        for template in TemplateSet::parse("default").unwrap().iter() {
            let set = template.windows(&s);
            prop_assert_eq!(set.windows.len(), len);
            for w in &set.windows {
                prop_assert_eq!(w.len(), template.arity());
                for slot in w {
                    if let Slot::Word(j) = slot {
                        prop_assert!((1..=len).contains(j));
                    }
                }
            }
        }
    }

    /// Walking heads upward agrees with the window and ends in ROOT.
    #[test]
    fn ancestor_paths_follow_heads((heads, _) in tree(25), n in 1usize..8) {
        let len = heads.len();
        let s = DepSentence::from_heads("a", &vec!["x"; len], &heads);
        for i in 1..=len {
            let w = ancestor_window(&s, i, n);
            prop_assert_eq!(w[0], Slot::Word(i));
            for k in 1..n {
                let expected = match w[k - 1] {
                    Slot::Word(j) if heads[j - 1] != 0 => Slot::Word(heads[j - 1]),
                    _ => Slot::Root,
                };
                prop_assert_eq!(w[k], expected);
            }
        }
    }

    #[test]
    fn siblings_share_head((heads, _) in tree(25)) {
        let len = heads.len();
        let s = DepSentence::from_heads("s", &vec!["x"; len], &heads);
        for i in 1..=len {
            let (l, r) = nearest_siblings(&s, i);
            for j in l.into_iter().chain(r) {
                prop_assert_eq!(heads[j - 1], heads[i - 1]);
                let (lo, hi) = (i.min(j), i.max(j));
                prop_assert!((lo + 1..hi).all(|k| heads[k - 1] != heads[i - 1]));
            }
        }
    }

    #[test]
    fn sequential_windows_pad_right(len in 1usize..20, n in 1usize..6) {
        let s = DepSentence::from_heads("q", &vec!["x"; len], &random_heads(&mut rng_from_seed(len as u64), len));
        for i in 1..=len {
            let w = sequential_window(&s, i, n);
            for (k, slot) in w.iter().enumerate() {
                let expected = if i + k <= len { Slot::Word(i + k) } else { Slot::Zero };
                prop_assert_eq!(*slot, expected);
            }
        }
    }

    #[test]
    fn max_pool_bounds(v in prop::collection::vec(-1e6f64..1e6, 1..50)) {
        let (m, idx) = max_pool(&v).unwrap();
        prop_assert_eq!(v[idx], m);
        prop_assert!(v.iter().all(|&x| x <= m));
        prop_assert!(v[..idx].iter().all(|&x| x < m));
    }

    #[test]
    fn softmax_is_a_distribution(v in prop::collection::vec(-500f64..500.0, 2..10), shift in -100f64..100.0) {
        let p = softmax(&v);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
        for (a, b) in p.iter().zip(softmax(&shifted)) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn template_dsl_round_trips(picks in prop::collection::btree_set(0usize..11, 1..11)) {
        let all = TemplateSet::parse("default").unwrap();
        let chosen: Vec<String> = picks.iter().map(|&i| all.templates()[i].to_string()).collect();
        let set = TemplateSet::parse(&chosen.join(",")).unwrap();
        prop_assert_eq!(set.len(), picks.len());
        prop_assert_eq!(TemplateSet::parse(&set.to_string()).unwrap(), set);
    }
}
