import numpy as np
import numpy.testing as npt
import pytest

from faceverify.evaluation import roc
from faceverify.linalg import l2_normalize, make_rng
from faceverify.metric import init_model
from faceverify.templates import (
    ManifestRow,
    Template,
    build_templates,
    fuse_scores,
    pool_template,
    read_manifest,
    read_score_matrix,
    score_templates,
    write_manifest,
    write_score_matrix,
)


class TestPoolTemplate:
    def test_single_feature_identity(self):
        x = l2_normalize(make_rng(0).standard_normal(8))
        npt.assert_allclose(pool_template([x]), x, atol=1e-15)

    def test_duplicates_pool_to_same_vector(self):
        x = l2_normalize(make_rng(1).standard_normal(8))
        npt.assert_allclose(pool_template([x, x]), x, atol=1e-15)

    def test_orthonormal_pair(self):
        e1 = np.array([1.0, 0.0])
        e2 = np.array([0.0, 1.0])
        npt.assert_allclose(pool_template([e1, e2]), np.array([1.0, 1.0]) / np.sqrt(2))

    def test_permutation_invariant(self):
        rng = make_rng(2)
        feats = [l2_normalize(rng.standard_normal(6)) for _ in range(5)]
        npt.assert_allclose(pool_template(feats), pool_template(feats[::-1]), atol=1e-15)

    def test_unit_norm_output(self):
        rng = make_rng(3)
        feats = [l2_normalize(rng.standard_normal(6)) for _ in range(4)]
        assert np.linalg.norm(pool_template(feats)) == pytest.approx(1.0, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            pool_template([])

    def test_antipodal_cancellation_rejected(self):
        x = np.array([1.0, 0.0])
        with pytest.raises(ValueError, match="zero norm"):
            pool_template([x, -x])


def make_pooled(rng, subject, tid, d=8):
    return Template(tid, subject, ["m"], l2_normalize(rng.standard_normal(d)))


class TestScoreTemplates:
    def test_matrix_shape_matches_protocol_scale(self):
        rng = make_rng(4)
        gallery = [make_pooled(rng, f"s{i}", f"g{i}") for i in range(167)]
        probe = [make_pooled(rng, f"s{i % 167}", f"p{i}") for i in range(1806)]
        scores = score_templates(gallery, probe, scorer="cosine")
        assert scores.shape == (167, 1806)

    def test_probe_equal_to_gallery_template_maximizes_column(self):
        rng = make_rng(5)
        gallery = [make_pooled(rng, f"s{i}", f"g{i}") for i in range(10)]
        probe = [Template("p0", "s3", ["m"], gallery[3].pooled_feature.copy())]
        scores = score_templates(gallery, probe, scorer="cosine")
        assert scores[:, 0].argmax() == 3

    def test_cosine_entries_bounded(self):
        rng = make_rng(6)
        gallery = [make_pooled(rng, f"s{i}", f"g{i}") for i in range(5)]
        probe = [make_pooled(rng, f"t{i}", f"p{i}") for i in range(7)]
        scores = score_templates(gallery, probe, scorer="cosine")
        assert np.all(scores <= 1.0 + 1e-12) and np.all(scores >= -1.0 - 1e-12)

    def test_jointbayes_requires_model(self):
        rng = make_rng(7)
        gallery = [make_pooled(rng, "a", "g0")]
        with pytest.raises(ValueError):
            score_templates(gallery, gallery, scorer="jointbayes")

    def test_jointbayes_scores(self):
        rng = make_rng(8)
        gallery = [make_pooled(rng, f"s{i}", f"g{i}") for i in range(3)]
        model = init_model(8, make_rng(9))
        scores = score_templates(gallery, gallery, scorer="jointbayes", model=model)
        # diagonal dominated by b - (-2 x'Bx); just check symmetry here
        npt.assert_allclose(scores, scores.T, atol=1e-10)


class TestFuse:
    def test_zero_fusion_identity(self):
        s = make_rng(10).standard_normal((4, 6))
        npt.assert_array_equal(fuse_scores(s, np.zeros_like(s)), s)

    def test_self_fusion_doubles(self):
        s = make_rng(11).standard_normal((3, 3))
        npt.assert_array_equal(fuse_scores(s, s), 2 * s)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            fuse_scores(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_correlated_fusion_preserves_roc(self):
        # fusing a scorer with a positively scaled copy cannot change the ROC
        rng = make_rng(12)
        scores = rng.standard_normal(100)
        labels = np.where(rng.random(100) < 0.4, 1, -1)
        fused = fuse_scores(scores[None, :], (2.0 * scores)[None, :]).ravel()
        base = roc(scores, labels)
        after = roc(fused, labels)
        npt.assert_allclose(base.far, after.far, atol=1e-15)
        npt.assert_allclose(base.tar, after.tar, atol=1e-15)


class TestManifest:
    def test_roundtrip(self, tmp_path):
        rows = [
            ManifestRow("t1", "s1", "a.pgm", "gallery", "0"),
            ManifestRow("t2", "s2", "b.pgm", "probe", "0"),
        ]
        path = tmp_path / "m.csv"
        write_manifest(path, rows)
        assert read_manifest(path) == rows

    def test_header_enforced(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            read_manifest(path)

    def test_build_templates_groups_and_pools(self):
        rng = make_rng(13)
        feats = np.stack([l2_normalize(rng.standard_normal(4)) for _ in range(4)])
        media = ["m0", "m1", "m2", "m3"]
        rows = [
            ManifestRow("t1", "s1", "m0", "gallery", "0"),
            ManifestRow("t1", "s1", "m2", "gallery", "0"),
            ManifestRow("t2", "s2", "m1", "gallery", "0"),
            ManifestRow("t3", "s1", "m3", "probe", "0"),
        ]
        gallery = build_templates(rows, feats, media, role="gallery")
        assert [t.template_id for t in gallery] == ["t1", "t2"]
        npt.assert_allclose(gallery[0].pooled_feature, pool_template(feats[[0, 2]]))
        probe = build_templates(rows, feats, media, role="probe")
        assert probe[0].media == ["m3"]

    def test_build_templates_rejects_subject_conflict(self):
        rng = make_rng(14)
        feats = np.stack([l2_normalize(rng.standard_normal(4)) for _ in range(2)])
        rows = [
            ManifestRow("t1", "s1", "m0", "gallery", "0"),
            ManifestRow("t1", "s2", "m1", "gallery", "0"),
        ]
        with pytest.raises(ValueError, match="spans subjects"):
            build_templates(rows, feats, ["m0", "m1"], role="gallery")

    def test_build_templates_missing_media(self):
        rows = [ManifestRow("t1", "s1", "nope", "gallery", "0")]
        with pytest.raises(KeyError):
            build_templates(rows, np.zeros((1, 4)), ["m0"], role="gallery")


class TestManifestInvariants:
    def test_filter_manifest(self):
        rows = [
            ManifestRow("t1", "s1", "a.pgm", "gallery", "0"),
            ManifestRow("t2", "s2", "b.pgm", "probe", "0"),
        ]
        from faceverify.templates import filter_manifest

        kept = filter_manifest(rows, lambda r: r.role == "probe")
        assert kept == [rows[1]]

    def test_disjoint_check_accepts_valid_split(self):
        from faceverify.templates import check_split_disjoint

        check_split_disjoint(
            [
                ManifestRow("g1", "s1", "a", "gallery", "0"),
                ManifestRow("p1", "s1", "b", "probe", "0"),
                ManifestRow("m", "s1", "a", "train", "0"),  # train rows exempt
            ]
        )

    def test_shared_media_rejected(self):
        from faceverify.templates import check_split_disjoint

        with pytest.raises(ValueError, match="share media"):
            check_split_disjoint(
                [
                    ManifestRow("g1", "s1", "a", "gallery", "0"),
                    ManifestRow("p1", "s1", "a", "probe", "0"),
                ]
            )

    def test_template_id_role_conflict_rejected(self):
        from faceverify.templates import check_split_disjoint

        with pytest.raises(ValueError, match="two roles"):
            check_split_disjoint(
                [
                    ManifestRow("t", "s1", "a", "gallery", "0"),
                    ManifestRow("t", "s1", "b", "probe", "0"),
                ]
            )


class TestScoreMatrixIO:
    def test_roundtrip_exact(self, tmp_path):
        rng = make_rng(15)
        scores = rng.standard_normal((3, 4))
        path = tmp_path / "scores.csv"
        write_score_matrix(path, scores, ["g0", "g1", "g2"], ["p0", "p1", "p2", "p3"])
        back, gids, pids = read_score_matrix(path)
        npt.assert_array_equal(back, scores)  # %.17g round-trips float64
        assert gids == ["g0", "g1", "g2"]
        assert pids == ["p0", "p1", "p2", "p3"]
