use proptest::prelude::*;
use supportnet::selector::{allocate_budget, select_random, select_support, SelectionMode};
use supportnet::svm::{margins, train_ovr, SvmConfig, SvmProblem};
use supportnet::{Dataset, Matrix, SeededRng, Split};

fn cloud(classes: usize, per_class: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = SeededRng::new(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for n in 0..classes * per_class {
        let c = n % classes;
        let mut x: Vec<f64> = (0..dim).map(|_| rng.standard_normal()).collect();
        x[c % dim] += 2.5;
        rows.push(x);
        labels.push(c);
    }
    Dataset::new(Matrix::from_rows(&rows).unwrap(), labels, Split::Train).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn selection_invariants(
        classes in 2usize..5,
        per_class in 5usize..25,
        budget_per_class in 1usize..30,
        seed in 0u64..1000,
    ) {
        let data = cloud(classes, per_class, 4, seed);
        let problem = SvmProblem::new(data.features().clone(), data.labels().to_vec(), 1.0).unwrap();
        let model = train_ovr(&problem, &SvmConfig { seed, ..SvmConfig::default() }).unwrap();
        let all: Vec<usize> = (0..classes).collect();
        let budgets = allocate_budget(budget_per_class * classes, &all).unwrap();
        let pick = |s| select_support(&model, data.features(), &data, &budgets, SelectionMode::SmallestMargin, &mut SeededRng::new(s)).unwrap();
        let set = pick(1);

        // deterministic
        let again = pick(2);
        prop_assert_eq!(set.entries(), again.entries());

        let m = margins(&model, data.features()).unwrap();
        for &(class, b) in &budgets {
            // sizes follow the allocation whenever the class is large enough
            prop_assert_eq!(set.class_count(class), b.min(per_class));
            let picked: Vec<_> = set.entries().iter().filter(|e| e.class == class).collect();
            let col = model.class_row(class).unwrap();
            for e in &picked {
                // flagged support vectors really are SVM support vectors
                if e.was_support_vector {
                    prop_assert!(model.support_of(class).binary_search(&e.dataset_index).is_ok());
                }
            }
            // no selected filler has larger |margin| than an unselected filler
            let fill_max = picked.iter().filter(|e| !e.was_support_vector)
                .map(|e| m.get(e.dataset_index, col).abs()).fold(f64::NEG_INFINITY, f64::max);
            let chosen: Vec<usize> = picked.iter().map(|e| e.dataset_index).collect();
            let unselected_min = data.indices_of_class(class).into_iter()
                .filter(|n| !chosen.contains(n) && model.support_of(class).binary_search(n).is_err())
                .map(|n| m.get(n, col).abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(fill_max <= unselected_min);
            // fillers only appear once every candidate is taken
            if picked.iter().any(|e| !e.was_support_vector) {
                let own_svs = data.indices_of_class(class).into_iter()
                    .filter(|n| model.support_of(class).binary_search(n).is_ok()).count();
                prop_assert_eq!(picked.iter().filter(|e| e.was_support_vector).count(), own_svs);
            }
        }
    }

    #[test]
    fn budget_allocation_is_fair(total in 1usize..5000, k in 1usize..20) {
        prop_assume!(total >= k);
        let classes: Vec<usize> = (0..k).map(|c| 3 * c).collect();
        let b = allocate_budget(total, &classes).unwrap();
        prop_assert_eq!(b.iter().map(|x| x.1).sum::<usize>(), total);
        let lo = b.iter().map(|x| x.1).min().unwrap();
        let hi = b.iter().map(|x| x.1).max().unwrap();
        prop_assert!(hi - lo <= 1);
    }

    #[test]
    fn random_selection_is_seeded_and_within_budget(seed in 0u64..500, b in 1usize..12) {
        let data = cloud(3, 10, 3, seed);
        let budgets = allocate_budget(3 * b, &[0, 1, 2]).unwrap();
        let a = select_random(data.features(), &data, &budgets, &mut SeededRng::new(seed)).unwrap();
        let again = select_random(data.features(), &data, &budgets, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(a.entries(), again.entries());
        prop_assert_eq!(a.len(), 3 * b.min(10));
    }
}
