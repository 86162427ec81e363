"""
roughmdp: desvios moderados para equações diferenciais rugosas guiadas por fBm.

Módulos:
    fbm        amostragem exata de fBm na grade diádica
    roughpath  lift de nível 2/3, Chen, dilatação, normas de Hölder
    fields     campos de coeficientes (linear, bilinear, tanh)
    rde        solvers das RDEs, sistema acoplado e Phi
    skeleton   matriz fundamental, ODE esqueleto, lei limite, taxa terminal
    mdp        experimentos de Monte Carlo (CLT e MDP)
    cli        linha de comando
"""

__version__ = "0.1.0"
