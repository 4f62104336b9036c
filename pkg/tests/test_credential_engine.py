import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import SCHEMA, fresh_presentation, make_env
from oracles import leaf, merkle_root, sha256
from ssi_access.credential_engine import (
    EMPTY_ROOT,
    CredentialSchema,
    compute_cred_id,
    leaf_hash,
    path_root,
    present,
    publish_schema,
    revoke,
    tree_path,
    tree_root,
    verify,
)
from ssi_access.errors import (
    AuthorizationError,
    ClaimMismatchError,
    NoSuchCredentialError,
    UnknownClaimError,
    UnknownIndexError,
)
from ssi_access.reasons import Reason

CLAIMS = {"vehicle": "V1", "slot": "08:00-18:00", "role": "renter"}


def test_leaf_and_root_match_oracle():
    salts = [bytes([i]) * 16 for i in range(7)]
    for n in range(0, 8):
        leaves = [leaf_hash(salts[i], f"c{i}", f"v{i}") for i in range(n)]
        assert leaves == [leaf(salts[i], f"c{i}", f"v{i}") for i in range(n)]
        assert tree_root(leaves) == merkle_root(leaves)
        for i in range(n):
            assert path_root(leaves[i], i, tree_path(leaves, i)) == tree_root(leaves)
    assert EMPTY_ROOT == sha256(b"")


def test_each_leaf_has_one_valid_index():
    leaves = [sha256(bytes([i])) for i in range(3)]
    path = tree_path(leaves, 2)
    # leaf 2 is paired with itself; index 3 must not place it
    with pytest.raises(ValueError):
        path_root(leaves[2], 3, path)
    with pytest.raises(ValueError):
        path_root(leaves[0], 4, tree_path(leaves, 0))


def _setup():
    env = make_env()
    issuer, holder = env.wallet("owner"), env.wallet("alice", register=False)
    return env, issuer, holder


def test_issue_records_hash_on_ledger():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder, {"vehicle": "V1", "slot": "08:00-18:00"})
    assert cred.claims == (("vehicle", "V1"), ("slot", "08:00-18:00"))
    seq = env.ledger.cred_hash_seq(cred.metadata.cred_hash)
    entry = env.ledger.read_entry(seq)
    assert entry["kind"] == "CRED_HASH" and entry["payload"]["cred_hash"] == cred.metadata.cred_hash
    assert compute_cred_id(cred.metadata.unsigned()) == cred.cred_id
    # the root commits to the salted leaves; the hash commits to the metadata only
    leaves = [leaf(s, n, v) for (n, v), s in zip(cred.claims, cred.claim_salts)]
    assert cred.metadata.commitment_root == merkle_root(leaves).hex()
    assert b"V1" not in str(entry).encode()


def test_issue_rejects_claim_outside_schema():
    env, issuer, holder = _setup()
    with pytest.raises(ClaimMismatchError):
        env.credential(issuer, holder, {"colour": "red"})


def test_revocation_indices_are_sequential():
    env, issuer, holder = _setup()
    a, b = env.credential(issuer, holder), env.credential(issuer, holder)
    assert (a.metadata.revocation_index, b.metadata.revocation_index) == (0, 1)


def test_honest_report_all_true():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    rep = verify(fresh_presentation(holder, cred), env.view(), 100)
    assert rep.ok and rep.failure_reasons == () and rep.checked_at_seq == env.ledger.height()


def test_disclose_subset_and_empty():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred, ["vehicle"])
    blob = p.to_bytes()
    assert p.disclosed_claims() == {"vehicle": "V1"}
    for (n, v), s in zip(cred.claims, cred.claim_salts):
        if n != "vehicle":
            assert v.encode() not in blob and s.hex().encode() not in blob
    assert verify(p, env.view(), 100).ok
    empty = fresh_presentation(holder, cred, [])
    assert empty.disclosed == () and verify(empty, env.view(), 100).ok
    with pytest.raises(UnknownClaimError):
        present(holder, cred, ["colour"], bytes(16))
    with pytest.raises(NoSuchCredentialError):
        present(holder, "00" * 32, [], bytes(16))


def test_value_swap_with_original_salt_breaks_integrity():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred, ["vehicle"])
    forged = dataclasses.replace(p, disclosed=(dataclasses.replace(p.disclosed[0], value="V2"),))
    rep = verify(forged, env.view(), 100)
    assert not rep.integrity_ok and Reason.INTEGRITY in rep.failure_reasons


def test_duplicate_disclosure_breaks_integrity():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred, ["vehicle"])
    doubled = dataclasses.replace(p, disclosed=p.disclosed * 2)
    assert not verify(doubled, env.view(), 100).integrity_ok


def test_validity_window():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder, validity=(50, 60))
    p = fresh_presentation(holder, cred)
    assert verify(p, env.view(), 49).failure_reasons == (Reason.NOT_YET_VALID,)
    assert verify(p, env.view(), 50).ok and verify(p, env.view(), 60).ok
    assert verify(p, env.view(), 61).failure_reasons == (Reason.EXPIRED,)


def test_revocation_and_history():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred)
    before = env.ledger.height()
    r = revoke(issuer, cred.metadata.registry_id, cred.metadata.revocation_index, env.validator)
    state = env.ledger.revocation_state(cred.metadata.registry_id)
    assert state.revoked_indices == {0}
    assert verify(p, env.view(), 100).failure_reasons == (Reason.REVOKED,)
    assert verify(p, env.view(before), 100).not_revoked
    # second revoke writes nothing and returns the original receipt
    assert revoke(issuer, cred.metadata.registry_id, 0, env.validator) == r
    assert env.ledger.height() == before + 1


def test_revoke_errors():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    other = env.wallet("other")
    with pytest.raises(AuthorizationError):
        revoke(other, cred.metadata.registry_id, 0, env.validator)
    with pytest.raises(UnknownIndexError):
        revoke(issuer, cred.metadata.registry_id, 9, env.validator)


def test_unknown_issuer_or_holder_fails_signature():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred)
    rep = verify(p, env.view(1), 100)  # only the issuer's DID existed at seq 1
    assert not rep.holder_sig_ok and not rep.integrity_ok


names = st.lists(st.from_regex(r"[a-z]{1,8}", fullmatch=True), min_size=1, max_size=6, unique=True)


@settings(max_examples=40)
@given(names, st.data())
def test_round_trip_random_schema(claim_names, data):
    env, issuer, holder = _setup()
    schema = CredentialSchema("s-" + "-".join(claim_names), tuple(claim_names))
    publish_schema(issuer, schema, env.validator)
    values = {n: data.draw(st.text(min_size=0, max_size=12)) for n in claim_names}
    cred = env.credential(issuer, holder, values, schema=schema)
    subset = data.draw(st.lists(st.sampled_from(claim_names), unique=True))
    p = fresh_presentation(holder, cred, subset, nonce=data.draw(st.binary(min_size=16, max_size=16)))
    assert verify(p, env.view(), 5).ok


def test_each_metadata_field_flips_a_flag():
    env, issuer, holder = _setup()
    cred = env.credential(issuer, holder)
    p = fresh_presentation(holder, cred)
    for f in dataclasses.fields(p.metadata):
        v = getattr(p.metadata, f.name)
        new = v + 1 if isinstance(v, int) else ("0" if v[:1] != "0" else "1") + v[1:]
        bad = dataclasses.replace(p, metadata=dataclasses.replace(p.metadata, **{f.name: new}))
        assert not verify(bad, env.view(), 100).ok, f.name
