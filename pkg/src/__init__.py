# DPVI-Engine: differentiell private Variationsinferenz
