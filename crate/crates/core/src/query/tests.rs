use proptest::prelude::*;

use super::*;
use crate::catalog::{AttributeSpec, Catalog, Corpus, CorpusFilter, LeadSentenceSummarizer};
use crate::extract::tokenizer::ApproxTokenizer;

fn catalog() -> Catalog {
    let corpus = Corpus::from_records(
        [
            ("p1".to_string(), "A player.".to_string()),
            ("t1".to_string(), "A team.".to_string()),
        ],
        &ApproxTokenizer,
        &LeadSentenceSummarizer::default(),
    )
    .unwrap();
    let mut cat = Catalog::new(corpus);
    let players = TableSpec {
        name: "Players".into(),
        attributes: vec![
            AttributeSpec::new("Players", "name", Dtype::String, "player name"),
            AttributeSpec::new("Players", "age", Dtype::Number, "age in years"),
            AttributeSpec::new("Players", "all_stars", Dtype::Number, "all-star selections"),
            AttributeSpec::new("Players", "team", Dtype::Categorical, "current team"),
            AttributeSpec::new("Players", "t1", Dtype::Number, "test attr"),
            AttributeSpec::new("Players", "t2", Dtype::Number, "test attr"),
            AttributeSpec::new("Players", "t3", Dtype::Number, "test attr"),
            AttributeSpec::new("Players", "t4", Dtype::Number, "test attr"),
            AttributeSpec::new("Players", "t5", Dtype::Number, "test attr"),
        ],
        corpus_filter: CorpusFilter::Ids(vec!["p1".into()]),
    };
    let teams = TableSpec {
        name: "Teams".into(),
        attributes: vec![
            AttributeSpec::new("Teams", "team_name", Dtype::Categorical, "team name"),
            AttributeSpec::new("Teams", "championships", Dtype::Number, "titles won"),
            AttributeSpec::new("Teams", "city", Dtype::String, "home city"),
        ],
        corpus_filter: CorpusFilter::Ids(vec!["t1".into()]),
    };
    cat.register_table(players).unwrap();
    cat.register_table(teams).unwrap();
    cat
}

fn names(e: &Expr) -> Vec<String> {
    leaves(e).iter().map(|p| p.attr.name.clone()).collect()
}

/// Shape of a tree with leaves replaced by their attribute names.
fn shape(e: &Expr) -> String {
    match e {
        Expr::Leaf(p) => p.attr.name.clone(),
        Expr::And(c) => format!("AND{{{}}}", c.iter().map(shape).collect::<Vec<_>>().join(",")),
        Expr::Or(c) => format!("OR{{{}}}", c.iter().map(shape).collect::<Vec<_>>().join(",")),
    }
}

#[test]
fn players_over_35() {
    let q = parse_query(
        "SELECT name FROM Players WHERE age > 35 AND all_stars > 12",
        &catalog(),
    )
    .unwrap();
    let w = q.where_clause.as_ref().unwrap();
    assert_eq!(shape(w), "AND{age,all_stars}");
    let l = leaves(w);
    assert_eq!(l[0].op, PredOp::Ge(Bound::exclusive(Value::Number(35.0))));
    assert!(!l[0].eval(&Value::Number(35.0)));
    assert!(l[0].eval(&Value::Number(36.0)));
    assert_eq!(q.select.len(), 1);
}

#[test]
fn mixed_tree_structure() {
    let q = parse_query(
        "SELECT name FROM Players WHERE (t1 = 1 OR t2 = 2) AND (t3 = 3 OR t4 = 4 AND t5 = 5)",
        &catalog(),
    )
    .unwrap();
    let w = q.where_clause.unwrap();
    assert_eq!(shape(&w), "AND{OR{t1,t2},OR{t3,AND{t4,t5}}}");
    assert_eq!(names(&w), ["t1", "t2", "t3", "t4", "t5"]);
    assert_eq!(w.depth(), 4);
}

#[test]
fn precedence() {
    let q = parse_query("SELECT name FROM Players WHERE t1 = 1 OR t2 = 2 AND t3 = 3", &catalog()).unwrap();
    assert_eq!(shape(q.where_clause.as_ref().unwrap()), "OR{t1,AND{t2,t3}}");
}

#[test]
fn same_connective_runs_flatten() {
    let q = parse_query(
        "SELECT name FROM Players WHERE (t1 = 1 AND t2 = 2) AND (t3 = 3 AND (t4 = 4))",
        &catalog(),
    )
    .unwrap();
    assert_eq!(shape(q.where_clause.as_ref().unwrap()), "AND{t1,t2,t3,t4}");
}

#[test]
fn projection_only() {
    let q = parse_query("SELECT name, age FROM Players", &catalog()).unwrap();
    assert!(q.where_clause.is_none());
    assert!(!q.is_join());
    assert_eq!(q.select.len(), 2);
}

#[test]
fn select_star_expands() {
    let q = parse_query("SELECT * FROM Teams", &catalog()).unwrap();
    assert_eq!(q.select.len(), 3);
}

#[test]
fn join_query_resolves_both_sides() {
    let q = parse_query(
        "SELECT Players.name, Teams.city FROM Players JOIN Teams ON Players.team = Teams.team_name \
         WHERE Players.age > 35 AND Teams.championships > 6",
        &catalog(),
    )
    .unwrap();
    assert!(q.is_join());
    assert_eq!(q.joins.len(), 1);
    assert_eq!(q.joins[0].left.table, "Players");
    assert_eq!(q.joins[0].right.name, "team_name");
    assert_eq!(q.table_attrs("Teams").len(), 3);
}

#[test]
fn between_and_in() {
    let q = parse_query(
        "SELECT name FROM Players WHERE age BETWEEN 20 AND 30 AND team IN ('Lakers', 'Celtics')",
        &catalog(),
    )
    .unwrap();
    let w = q.where_clause.unwrap();
    let l = leaves(&w);
    assert!(matches!(l[0].op, PredOp::Range { .. }));
    assert!(l[0].eval(&Value::Number(20.0)) && l[0].eval(&Value::Number(30.0)));
    assert!(!l[0].eval(&Value::Number(31.0)));
    assert!(l[1].eval(&Value::Text(" lakers ".into())));
    assert!(!l[1].eval(&Value::Null));
}

#[test]
fn bracket_in_list() {
    let q = parse_query("SELECT name FROM Players WHERE team IN ['Warriors']", &catalog()).unwrap();
    assert_eq!(leaves(q.where_clause.as_ref().unwrap()).len(), 1);
}

#[test]
fn errors() {
    let cat = catalog();
    let err = |q: &str| parse_query(q, &cat).unwrap_err();
    assert!(matches!(err("SELECT name FROM Nope"), QueryError::UnknownSymbol { pos: 17, .. }));
    assert!(matches!(err("SELECT height FROM Players"), QueryError::UnknownSymbol { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE age = 'old'"), QueryError::Type { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE team > 'a'"), QueryError::Type { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE NOT age = 3"), QueryError::Syntax { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE age != 3"), QueryError::Syntax { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE age BETWEEN 5 AND 1"), QueryError::Type { .. }));
    assert!(matches!(err("SELECT name FROM Players WHERE"), QueryError::Syntax { .. }));
    assert!(matches!(
        err("SELECT name FROM Players WHERE (age = 3"),
        QueryError::Syntax { .. }
    ));
    assert!(matches!(
        err("SELECT name FROM Players JOIN Teams ON Players.age = Teams.team_name"),
        QueryError::Type { .. }
    ));
}

#[test]
fn leaves_of_single_leaf() {
    let q = parse_query("SELECT name FROM Players WHERE age >= 3", &catalog()).unwrap();
    let w = q.where_clause.unwrap();
    assert!(w.is_leaf());
    assert_eq!(names(&w), ["age"]);
}

#[test]
fn synthetic_in_dedups_and_canonicalizes() {
    let attr = AttrRef {
        table: "Teams".into(),
        name: "team_name".into(),
        dtype: Dtype::Categorical,
    };
    let p = Predicate::synthetic_in(
        attr,
        ["Warriors", "Celtics", "Lakers", "lakers "].map(|s| Value::Text(s.into())),
    );
    assert!(p.synthetic);
    let PredOp::In(set) = &p.op else { panic!() };
    assert_eq!(
        set,
        &["celtics", "lakers", "warriors"].map(|s| Value::Text(s.into())).to_vec()
    );
}

// -- generated trees -------------------------------------------------------

fn leaf(i: usize) -> Expr {
    Expr::Leaf(Predicate {
        attr: AttrRef {
            table: "Players".into(),
            name: format!("t{}", i % 5 + 1),
            dtype: Dtype::Number,
        },
        op: PredOp::Eq(Value::Number(i as f64)),
        synthetic: false,
    })
}

/// Random expression trees with arbitrary (unflattened) nesting.
fn arb_tree() -> impl Strategy<Value = Expr> {
    let base = (0usize..20).prop_map(leaf);
    base.prop_recursive(4, 12, 3, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Expr::And),
            prop::collection::vec(inner, 1..4).prop_map(Expr::Or),
        ]
    })
}

fn well_formed(e: &Expr) -> bool {
    match e {
        Expr::Leaf(_) => true,
        Expr::And(c) => c.len() >= 2 && c.iter().all(|x| !matches!(x, Expr::And(_)) && well_formed(x)),
        Expr::Or(c) => c.len() >= 2 && c.iter().all(|x| !matches!(x, Expr::Or(_)) && well_formed(x)),
    }
}

proptest! {
    #[test]
    fn flatten_is_idempotent(t in arb_tree()) {
        let once = flatten(t);
        prop_assert_eq!(flatten(once.clone()), once);
    }

    #[test]
    fn flatten_preserves_leaf_order_and_is_well_formed(t in arb_tree()) {
        let before: Vec<Predicate> = leaves(&t).into_iter().cloned().collect();
        let f = flatten(t);
        let after: Vec<Predicate> = leaves(&f).into_iter().cloned().collect();
        prop_assert_eq!(before, after);
        prop_assert!(well_formed(&f));
    }

    #[test]
    fn print_parse_round_trip(t in arb_tree()) {
        let cat = catalog();
        let tree = flatten(t);
        let text = format!("SELECT name FROM Players WHERE {}", tree.unqualified());
        let q = parse_query(&text, &cat).unwrap();
        prop_assert_eq!(q.where_clause.as_ref().unwrap(), &tree);
        let reprinted = q.to_string();
        let q2 = parse_query(&reprinted, &cat).unwrap();
        prop_assert_eq!(q2, q);
    }

    #[test]
    fn leaf_count_matches_construction(n in 1usize..8) {
        let t = Expr::And((0..n).map(leaf).collect());
        let f = flatten(t);
        prop_assert_eq!(leaves(&f).len(), n);
        let ids: Vec<String> = leaves(&f)
            .iter()
            .map(|p| match &p.op {
                PredOp::Eq(v) => v.to_string(),
                _ => unreachable!(),
            })
            .collect();
        let want: Vec<String> = (0..n).map(|i| Value::Number(i as f64).to_string()).collect();
        prop_assert_eq!(ids, want);
    }
}
