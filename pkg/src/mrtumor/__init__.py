"""Three-stage MR brain tumor pipeline: patient SVM gate, slice forest, contralateral segmentation."""

__version__ = "0.1.0"
