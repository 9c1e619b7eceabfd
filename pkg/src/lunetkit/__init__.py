"""Multi-task echocardiography pipeline: localization, ROI segmentation,
and the geometric / anatomical / clinical measurement stack, with a
synthetic phantom generator for closed-loop verification."""

__version__ = "0.1.0"
