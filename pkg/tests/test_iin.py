import pytest

from fedchain import cosi
from fedchain.iin import IdentityRecord, IdentityRegistry, RegistryError, Role, UnknownNetwork


def record(net, client, seed=None, roles=Role.COSIGNER):
    keys = cosi.keygen(seed if seed is not None else net * 1000 + client, client)
    return IdentityRecord(net, client, keys.public, cosi.prove_possession(keys.secret), roles), keys


def test_register_and_lookup():
    reg = IdentityRegistry()
    rec, keys = record(1, 3)
    assert reg.register(rec)
    assert reg.lookup(1, 3).public_key == keys.public
    with pytest.raises(RegistryError):
        reg.register(rec)
    with pytest.raises(RegistryError):
        reg.lookup(1, 4)


def test_forged_possession_rejected():
    reg = IdentityRegistry()
    rec, _ = record(1, 1)
    _, other = record(1, 2)
    forged = IdentityRecord(1, 1, rec.public_key, cosi.prove_possession(other.secret), rec.roles)
    with pytest.raises(RegistryError):
        reg.register(forged)


def test_network_keys_in_registration_order():
    reg = IdentityRegistry()
    pubs = []
    for c in (5, 2, 9, 1, 7):
        rec, keys = record(1, c)
        reg.register(rec)
        pubs.append(keys.public)
    reg.register(record(1, 50, roles=Role.CLIENT)[0])
    keys, sid = reg.lookup_network_keys(1)
    assert keys == pubs and sid == cosi.set_id_of(pubs)
    assert reg.lookup_network_keys(1) == (keys, sid)
    assert reg.cosigner_ids(1) == [5, 2, 9, 1, 7]
    reg.register(record(1, 11)[0])
    assert reg.lookup_network_keys(1)[1] != sid
    with pytest.raises(UnknownNetwork):
        reg.lookup_network_keys(2)


def test_validation_pointer():
    reg = IdentityRegistry()
    reg.register(record(1, 1)[0])
    with pytest.raises(RegistryError):
        reg.lookup_validation_pointer(1)
    reg.set_validation_pointer(1, "synth://seed=1&n=10&d=2&classes=2")
    assert reg.lookup_validation_pointer(1) == "synth://seed=1&n=10&d=2&classes=2"
    reg.set_validation_pointer(1, "synth://seed=2&n=10&d=2&classes=2")
    assert reg.lookup_validation_pointer(1).startswith("synth://seed=2")
    with pytest.raises(UnknownNetwork):
        reg.lookup_validation_pointer(9)


def test_collective_signature_from_registered_set():
    reg = IdentityRegistry()
    keys = []
    for c in range(5):
        rec, k = record(3, c)
        reg.register(rec)
        keys.append(k)
    pubs, sid = reg.lookup_network_keys(3)
    digest = b"\x42" * 32
    sig = cosi.aggregate([(i, keys[i].sign(digest)) for i in (1, 2, 3)], 5, sid)
    assert cosi.verify_collective(pubs, sig, digest, sid).ok
    outsider = cosi.keygen(99999)
    sig2 = cosi.aggregate([(i, (outsider if i == 1 else keys[i]).sign(digest)) for i in (1, 2, 3)], 5, sid)
    assert not cosi.verify_collective(pubs, sig2, digest, sid).ok


def test_csv_roundtrip(tmp_path):
    reg = IdentityRegistry()
    for net in (1, 2):
        for c in range(3):
            reg.register(record(net, c, roles=Role.COSIGNER | Role.CLIENT if c else Role.RELAY)[0])
    path = tmp_path / "iin.csv"
    reg.export_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "network_id,client_id,pubkey_hex,roles,pop_hex"
    back = IdentityRegistry.import_csv(path)
    for net in (1, 2):
        assert back.lookup_network_keys(net) == reg.lookup_network_keys(net)
        assert back.lookup(net, 0).roles == Role.RELAY
