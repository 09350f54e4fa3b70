"""Display-to-sensor geometry: gray-code decoding, homographies, warping."""

from .graycode import decode_gray_code
from .homography import CorrespondenceSet, Homography, fit_homography, reprojection_error
from .reference import AlignedPair, align_reference, histogram_match
from .warp import warp

__all__ = ["AlignedPair", "CorrespondenceSet", "Homography", "align_reference", "decode_gray_code",
           "fit_homography", "histogram_match", "reprojection_error", "warp"]
