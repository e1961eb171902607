//! Aggregation algebra checked against independent oracles: plain integer
//! polynomial evaluation and Lagrange interpolation at zero in u128
//! arithmetic that shares no code with the crate's field type.

use ctxpriv::netsim::{NodeId, SimRng};
use ctxpriv::ppda::{
    gen_shares, node_aggregate, FieldElem, recover_pair_sum, run_cpda, run_sppda_traced, solve_aggregate, Field, NodeAggregate,
    RandomCoeffs, SeedAssignment, Share, DEFAULT_MODULUS,
};
use ctxpriv::keymgmt::{Wire, WireMessage};
use proptest::prelude::*;

const P: u128 = DEFAULT_MODULUS as u128;

fn pow_mod(mut b: u128, mut e: u128) -> u128 {
    let mut acc = 1;
    b %= P;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % P;
        }
        b = b * b % P;
        e >>= 1;
    }
    acc
}

/// `D = Σ Fᵢ · Π_{j≠i} sⱼ / (sⱼ − sᵢ) mod p`.
fn lagrange_at_zero(seeds: &[u128], f: &[u128]) -> u128 {
    let mut d = 0;
    for i in 0..seeds.len() {
        let (mut num, mut den) = (1u128, 1u128);
        for j in 0..seeds.len() {
            if i != j {
                num = num * seeds[j] % P;
                den = den * ((seeds[j] + P - seeds[i]) % P) % P;
            }
        }
        d = (d + f[i] * num % P * pow_mod(den, P - 2)) % P;
    }
    d
}

fn ids() -> Vec<NodeId> {
    vec![NodeId(0), NodeId(1), NodeId(2)]
}

#[test]
fn worked_example_matches_integer_oracle() {
    let seeds = [1i128, 2, 3];
    let values = [3i128, 5, 7]; // A, S1, S2
    let masks = [[10i128, 20], [30, 40], [50, 60]];
    let poly = |v: i128, r: [i128; 2], s: i128| v + r[0] * s + r[1] * s * s;

    let oracle_shares: Vec<Vec<i128>> = (0..3).map(|i| seeds.iter().map(|&s| poly(values[i], masks[i], s)).collect()).collect();
    assert_eq!(oracle_shares, vec![vec![33, 103, 213], vec![75, 225, 455], vec![117, 347, 697]]);
    let oracle_f: Vec<i128> = (0..3).map(|j| (0..3).map(|i| oracle_shares[i][j]).sum()).collect();
    assert_eq!(oracle_f, vec![225, 675, 1365]);
    // exact rational Lagrange weights for seeds 1, 2, 3 are 3, −3, 1
    let oracle_d = 3 * oracle_f[0] - 3 * oracle_f[1] + oracle_f[2];
    assert_eq!(oracle_d, 15);
    assert_eq!(oracle_d - values[0], 12);

    let fd = Field::default();
    let sa = SeedAssignment::new(ids(), seeds.iter().map(|s| fd.elem(*s as u64)).collect()).unwrap();
    let mut by_party: Vec<Vec<Share>> = vec![Vec::new(); 3];
    for i in 0..3 {
        let coeffs = RandomCoeffs::quadratic(fd.elem(masks[i][0] as u64), fd.elem(masks[i][1] as u64));
        let shares = gen_shares(ids()[i], fd.elem(values[i] as u64), &sa, &coeffs).unwrap();
        let got: Vec<i128> = shares.iter().map(|s| s.value.value() as i128).collect();
        assert_eq!(got, oracle_shares[i]);
        for (j, s) in shares.into_iter().enumerate() {
            by_party[j].push(s);
        }
    }
    let aggs: Vec<NodeAggregate> = by_party
        .iter()
        .enumerate()
        .map(|(j, sh)| node_aggregate(sh[j], &[sh[(j + 1) % 3], sh[(j + 2) % 3]]).unwrap())
        .collect();
    let got_f: Vec<i128> = aggs.iter().map(|a| a.f.value() as i128).collect();
    assert_eq!(got_f, oracle_f);
    let d = solve_aggregate(&sa, &aggs).unwrap();
    assert_eq!(d.value() as i128, oracle_d);
    assert_eq!(recover_pair_sum(d, fd.elem(3)).value(), 12);
}

fn seeds_strategy() -> impl Strategy<Value = [u64; 3]> {
    prop::array::uniform3(1..DEFAULT_MODULUS).prop_filter("distinct", |s| s[0] != s[1] && s[1] != s[2] && s[0] != s[2])
}

fn elem() -> impl Strategy<Value = u64> {
    0..DEFAULT_MODULUS
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    // every share equals v + R1·s + R2·s² mod p computed independently
    #[test]
    fn share_conformance(seeds in seeds_strategy(), v in elem(), r1 in elem(), r2 in elem()) {
        let fd = Field::default();
        let sa = SeedAssignment::new(ids(), seeds.iter().map(|s| fd.elem(*s)).collect()).unwrap();
        let shares = gen_shares(NodeId(1), fd.elem(v), &sa, &RandomCoeffs::quadratic(fd.elem(r1), fd.elem(r2))).unwrap();
        for (s, &seed) in shares.iter().zip(&seeds) {
            let (v, r1, r2, seed) = (v as u128, r1 as u128, r2 as u128, seed as u128);
            prop_assert_eq!(s.value.value() as u128, (v + r1 * seed % P + r2 * (seed * seed % P) % P) % P);
        }
    }

    // D agrees with Lagrange interpolation and with the direct sum
    #[test]
    fn exact_recovery(seeds in seeds_strategy(), vals in prop::array::uniform3(elem()), masks in prop::array::uniform6(elem())) {
        let fd = Field::default();
        let sa = SeedAssignment::new(ids(), seeds.iter().map(|s| fd.elem(*s)).collect()).unwrap();
        let mut f = [fd.zero(); 3];
        for i in 0..3 {
            let c = RandomCoeffs::quadratic(fd.elem(masks[2 * i]), fd.elem(masks[2 * i + 1]));
            for (j, s) in gen_shares(ids()[i], fd.elem(vals[i]), &sa, &c).unwrap().iter().enumerate() {
                f[j] += s.value;
            }
        }
        let aggs: Vec<NodeAggregate> = (0..3).map(|j| NodeAggregate { party: ids()[j], f: f[j] }).collect();
        let d = solve_aggregate(&sa, &aggs).unwrap().value() as u128;
        let oracle = lagrange_at_zero(&seeds.map(|s| s as u128), &f.map(|x| x.value() as u128));
        prop_assert_eq!(d, oracle);
        prop_assert_eq!(d, vals.iter().map(|v| *v as u128).sum::<u128>() % P);
    }

    // two independent mask draws give the same D
    #[test]
    fn randomness_cancels(seed in any::<u64>(), vals in prop::array::uniform3(elem())) {
        let fd = Field::default();
        let mut rng = SimRng::new(seed, "cancel");
        let sa = SeedAssignment::draw(fd, ids(), &mut rng).unwrap();
        let run = |rng: &mut SimRng| {
            let mut f = [fd.zero(); 3];
            for i in 0..3 {
                let c = RandomCoeffs::random(fd, 2, rng);
                for (j, s) in gen_shares(ids()[i], fd.elem(vals[i]), &sa, &c).unwrap().iter().enumerate() {
                    f[j] += s.value;
                }
            }
            let aggs: Vec<NodeAggregate> = (0..3).map(|j| NodeAggregate { party: ids()[j], f: f[j] }).collect();
            (f, solve_aggregate(&sa, &aggs).unwrap())
        };
        let (f1, d1) = run(&mut rng.fork("a"));
        let (f2, d2) = run(&mut rng.fork("b"));
        prop_assert_ne!(f1, f2);
        prop_assert_eq!(d1, d2);
    }

    // the aggregator's view is consistent with any split x' + y' = x + y
    #[test]
    fn aggregator_view_is_ambiguous(seeds in seeds_strategy(), vals in prop::array::uniform3(elem()),
                                    masks in prop::array::uniform6(elem()), delta in 1..DEFAULT_MODULUS) {
        let fd = Field::default();
        let s: Vec<_> = seeds.iter().map(|x| fd.elem(*x)).collect();
        let sa = SeedAssignment::new(ids(), s.clone()).unwrap();
        let coeffs: Vec<RandomCoeffs> = (0..3).map(|i| RandomCoeffs::quadratic(fd.elem(masks[2 * i]), fd.elem(masks[2 * i + 1]))).collect();
        // q(s) = 1 − s/a vanishes at A's seed and is 1 at zero
        let q1 = -(s[0].inv().unwrap());
        let d = fd.elem(delta);
        let shifted = |c: &RandomCoeffs, k: FieldElem| RandomCoeffs::quadratic(c.coeffs[0] + k * q1, c.coeffs[1]);
        let view = |x: u64, y: u64, c1: &RandomCoeffs, c2: &RandomCoeffs| {
            let a = gen_shares(ids()[0], fd.elem(vals[0]), &sa, &coeffs[0]).unwrap();
            let s1 = gen_shares(ids()[1], fd.elem(x), &sa, c1).unwrap();
            let s2 = gen_shares(ids()[2], fd.elem(y), &sa, c2).unwrap();
            // A sees the shares at its seed and the sources' sums
            (s1[0].value, s2[0].value, a[1].value + s1[1].value + s2[1].value, a[2].value + s1[2].value + s2[2].value)
        };
        let x2 = (fd.elem(vals[1]) + d).value();
        let y2 = (fd.elem(vals[2]) - d).value();
        prop_assert_eq!(
            view(vals[1], vals[2], &coeffs[1], &coeffs[2]),
            view(x2, y2, &shifted(&coeffs[1], d), &shifted(&coeffs[2], -d))
        );
    }

    // reordering participants and their sums does not change D
    #[test]
    fn permutation_equivariance(seeds in seeds_strategy(), f in prop::array::uniform3(elem()), order in Just([0usize, 1, 2]).prop_shuffle()) {
        let fd = Field::default();
        let sa = SeedAssignment::new(ids(), seeds.iter().map(|x| fd.elem(*x)).collect()).unwrap();
        let aggs: Vec<NodeAggregate> = (0..3).map(|j| NodeAggregate { party: ids()[j], f: fd.elem(f[j]) }).collect();
        let shuffled: Vec<NodeAggregate> = order.iter().map(|&i| aggs[i]).collect();
        prop_assert_eq!(solve_aggregate(&sa, &aggs).unwrap(), solve_aggregate(&sa.permuted(&order), &shuffled).unwrap());
    }

    #[test]
    fn cpda_matches_direct_sum(seed in any::<u64>(), vals in prop::collection::vec(elem(), 3..10)) {
        let fd = Field::default();
        let v: Vec<_> = vals.iter().map(|x| fd.elem(*x)).collect();
        let expect = vals.iter().map(|x| *x as u128).sum::<u128>() % P;
        prop_assert_eq!(run_cpda(&v, &mut SimRng::new(seed, "cpda")).unwrap().value() as u128, expect);
    }
}

#[test]
fn round_audit_conforms_to_transcript() {
    let fd = Field::default();
    let round = run_sppda_traced(fd.elem(5), fd.elem(7), fd.elem(3), &mut SimRng::new(4, "audit"), &mut Wire::new()).unwrap();
    let t = &round.transcript;
    // every audited share is v + R1·s + R2·s² of its producer at the receiver's seed
    for sh in &round.audit.shares {
        let v = round.audit.values[&sh.producer].value() as u128;
        let c = &round.audit.coeffs[&sh.producer].coeffs;
        let s = t.seeds.seed_of(sh.evaluated_at).unwrap().value() as u128;
        let expect = (v + c[0].value() as u128 * s % P + c[1].value() as u128 * (s * s % P) % P) % P;
        assert_eq!(sh.value.value() as u128, expect);
    }
    // the only plaintext data on the wire is the seed list
    let seeds: Vec<u64> = t.seeds.seeds().iter().map(|s| s.value()).collect();
    for r in &t.frames {
        if let WireMessage::Plain(p) = &r.message {
            assert_eq!(p.values, seeds);
        }
    }
    let f: Vec<u128> = t.f_values.iter().map(|a| a.f.value() as u128).collect();
    let s: Vec<u128> = seeds.iter().map(|x| *x as u128).collect();
    assert_eq!(lagrange_at_zero(&s, &f), 15);
    assert_eq!(t.result.pair_sum.value(), 12);
}
